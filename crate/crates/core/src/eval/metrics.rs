//! Trajectory files and error metrics.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, Quaternion, Vector3, SVD};

use crate::error::{Error, Result};
use crate::manifold::{Pose, Rotation};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

/// One line per pose: `timestamp tx ty tz qx qy qz qw`.
pub fn format_tum(poses: &[StampedPose]) -> String {
    let mut s = String::with_capacity(poses.len() * 120);
    for p in poses {
        let t = &p.pose.translation;
        let q = p.pose.rotation.quaternion();
        let _ = writeln!(s, "{} {} {} {} {} {} {} {}", p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w);
    }
    s
}

pub fn write_tum(path: &Path, poses: &[StampedPose]) -> Result<()> {
    std::fs::write(path, format_tum(poses)).map_err(|e| Error::io(path, e))
}

pub fn parse_tum(path: &Path, text: &str) -> Result<Vec<StampedPose>> {
    let mut out: Vec<StampedPose> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if v.len() != 8 {
            return Err(Error::parse(path, i + 1, format!("expected 8 fields, got {}", v.len())));
        }
        if out.last().is_some_and(|p| p.timestamp >= v[0]) {
            return Err(Error::parse(path, i + 1, "timestamps must be strictly increasing"));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if !(q.norm() > 0.0) {
            return Err(Error::parse(path, i + 1, "zero quaternion"));
        }
        out.push(StampedPose {
            timestamp: v[0],
            pose: Pose::new(Vector3::new(v[1], v[2], v[3]), Rotation::from_quaternion(q)),
        });
    }
    Ok(out)
}

pub fn read_tum(path: &Path) -> Result<Vec<StampedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tum(path, &text)
}

/// Estimate/truth index pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    pub pairs: Vec<(usize, usize)>,
    /// Estimate samples without a partner.
    pub unmatched: usize,
}

/// Pairs every estimate sample with the nearest truth sample within `max_dt`.
pub fn associate(estimate: &[StampedPose], truth: &[StampedPose], max_dt: f64) -> Result<Association> {
    let mut pairs = Vec::new();
    for (i, e) in estimate.iter().enumerate() {
        let k = truth.partition_point(|g| g.timestamp < e.timestamp);
        let best = [k.checked_sub(1), (k < truth.len()).then_some(k)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                let da = (truth[a].timestamp - e.timestamp).abs();
                let db = (truth[b].timestamp - e.timestamp).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            });
        if let Some(j) = best {
            if (truth[j].timestamp - e.timestamp).abs() <= max_dt {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::AssociationFailed { max_dt });
    }
    Ok(Association {
        unmatched: estimate.len() - pairs.len(),
        pairs,
    })
}

/// Rigid transform `T` minimizing `Σ‖T·src_i − dst_i‖²`. `None` with fewer
/// than three points or collinear points.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return None;
    }
    let mu_s = src.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
        spread += (s - mu_s) * (s - mu_s).transpose();
    }
    let sv = SVD::new(spread, false, false).singular_values;
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return None;
    }
    let svd = SVD::new(cov, true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    let t = mu_d - r * mu_s;
    Some(Pose::new(t, Rotation::from_matrix(&r)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AteResult {
    pub rmse: f64,
    /// Transform applied to the estimate (identity without alignment).
    pub alignment: Pose,
    pub aligned: bool,
}

/// Translational RMSE after optional rigid alignment of the estimate onto
/// the truth. Degenerate alignments fall back to no alignment.
pub fn compute_ate(estimate: &[StampedPose], truth: &[StampedPose], assoc: &Association, align: bool) -> AteResult {
    let src: Vec<Vector3<f64>> = assoc.pairs.iter().map(|&(i, _)| estimate[i].pose.translation).collect();
    let dst: Vec<Vector3<f64>> = assoc.pairs.iter().map(|&(_, j)| truth[j].pose.translation).collect();
    let mut alignment = Pose::identity();
    let mut aligned = false;
    if align {
        match umeyama(&src, &dst) {
            Some(t) => {
                alignment = t;
                aligned = true;
            }
            None => warn!("degenerate trajectory alignment; computing ATE without alignment"),
        }
    }
    let sum: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (alignment.transform_point(s) - d).norm_squared())
        .sum();
    AteResult {
        rmse: (sum / src.len() as f64).sqrt(),
        alignment,
        aligned,
    }
}

/// RMSE of the relative translation error between paired samples `step`
/// seconds apart (partners within ±step/2 of the target time).
pub fn compute_rpe(estimate: &[StampedPose], truth: &[StampedPose], assoc: &Association, step: f64) -> Result<f64> {
    let pairs = &assoc.pairs;
    let times: Vec<f64> = pairs.iter().map(|&(i, _)| estimate[i].timestamp).collect();
    let span = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    if pairs.len() < 2 || span < step {
        return Err(Error::InsufficientSpan { span, step });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for a in 0..pairs.len() {
        let target = times[a] + step;
        let k = times.partition_point(|&t| t < target);
        let best = [k.checked_sub(1), (k < times.len()).then_some(k)]
            .into_iter()
            .flatten()
            .filter(|&b| b > a)
            .min_by(|&x, &y| (times[x] - target).abs().total_cmp(&(times[y] - target).abs()).then(x.cmp(&y)));
        let Some(b) = best else { continue };
        if (times[b] - target).abs() > 0.5 * step {
            continue;
        }
        let (ea, eb) = (&estimate[pairs[a].0].pose, &estimate[pairs[b].0].pose);
        let (ga, gb) = (&truth[pairs[a].1].pose, &truth[pairs[b].1].pose);
        let rel_e = ea.inverse().compose(eb);
        let rel_g = ga.inverse().compose(gb);
        let err = rel_g.inverse().compose(&rel_e);
        sum += err.translation.norm_squared();
        count += 1;
    }
    if count == 0 {
        return Err(Error::InsufficientSpan { span, step });
    }
    Ok((sum / count as f64).sqrt())
}
