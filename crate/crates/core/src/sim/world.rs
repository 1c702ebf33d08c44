//! Landmark fields and the boxes that hide them.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    /// Density counts landmarks per m² of the two largest box extents.
    #[default]
    Plane,
    /// Density counts landmarks per m³.
    Volume,
}

/// Axis-aligned box filled uniformly with landmarks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub density: f64,
    #[serde(default)]
    pub surface: Surface,
}

/// Featureless box: blocks the view of anything behind it and contains
/// no landmarks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccluderSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub clusters: Vec<ClusterSpec>,
    pub occluders: Vec<OccluderSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(a: [f64; 3], b: [f64; 3]) -> Self {
        let (a, b) = (Vector3::from(a), Vector3::from(b));
        Self {
            min: a.inf(&b),
            max: a.sup(&b),
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Whether the open segment from `a` to `b` passes through the box
    /// (slab test).
    pub fn blocks(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        let d = b - a;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if a[k] < self.min[k] || a[k] > self.max[k] {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / d[k];
            let (mut t0, mut t1) = ((self.min[k] - a[k]) * inv, (self.max[k] - a[k]) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            lo = lo.max(t0);
            hi = hi.min(t1);
            if lo > hi {
                return false;
            }
        }
        // Landmarks sitting on a box face are not hidden by that box.
        lo < 1.0 - 1e-9 && hi > 1e-9
    }
}

#[derive(Clone, Debug)]
pub struct World {
    /// Landmark positions; the index is the landmark id.
    pub landmarks: Vec<Vector3<f64>>,
    pub occluders: Vec<Aabb>,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters.iter().any(|c| !(c.density >= 0.0)) {
            return Err(Error::Config("world: densities must be non-negative".into()));
        }
        if !self.clusters.iter().any(|c| c.density > 0.0) {
            return Err(Error::Config("world: at least one cluster must hold landmarks".into()));
        }
        Ok(())
    }

    pub fn build(&self, rng: &mut impl Rng) -> Result<World> {
        self.validate()?;
        let occluders: Vec<Aabb> = self.occluders.iter().map(|o| Aabb::new(o.min, o.max)).collect();
        let mut landmarks = Vec::new();
        for c in &self.clusters {
            let b = Aabb::new(c.min, c.max);
            let mut ext: Vec<f64> = (b.max - b.min).iter().copied().collect();
            ext.sort_by(|x, y| y.total_cmp(x));
            let measure = match c.surface {
                Surface::Plane => ext[0] * ext[1],
                Surface::Volume => ext[0] * ext[1] * ext[2],
            };
            let n = (c.density * measure).round() as usize;
            for _ in 0..n {
                let p = Vector3::from_fn(|k, _| {
                    if b.max[k] > b.min[k] {
                        rng.random_range(b.min[k]..=b.max[k])
                    } else {
                        b.min[k]
                    }
                });
                if !occluders.iter().any(|o| o.contains(&p) && !on_face(o, &p)) {
                    landmarks.push(p);
                }
            }
        }
        Ok(World { landmarks, occluders })
    }
}

fn on_face(b: &Aabb, p: &Vector3<f64>) -> bool {
    (0..3).any(|k| p[k] == b.min[k] || p[k] == b.max[k])
}

impl World {
    pub fn occluded(&self, eye: &Vector3<f64>, p: &Vector3<f64>) -> bool {
        self.occluders.iter().any(|o| o.blocks(eye, p))
    }
}
