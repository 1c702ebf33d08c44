//! Front-end coordinator: per-camera feature budgets, frame priorities and
//! the decision of which pending frame the back end processes next.

use std::sync::Arc;

use nalgebra::Vector2;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A camera whose pending frame has waited at least this fraction of the
/// staleness threshold since its last forward is served ahead of the
/// priority ranking.
pub const STARVATION_GUARD_FRACTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinatorConfig {
    pub total_feature_budget: usize,
    pub priority_decay_k: f64,
    pub stale_threshold_s: f64,
    pub min_budget: usize,
    /// When false every camera keeps a fixed equal share of the budget.
    pub allocate: bool,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            total_feature_budget: 350,
            priority_decay_k: 2.0,
            stale_threshold_s: 2.0,
            min_budget: 10,
            allocate: true,
        }
    }
}

impl CoordinatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_feature_budget == 0 {
            return Err(Error::Config("total_feature_budget must be positive".into()));
        }
        if !(self.priority_decay_k > 0.0 && self.priority_decay_k.is_finite()) {
            return Err(Error::Config("priority_decay_k must be positive".into()));
        }
        if !(self.stale_threshold_s > 0.0 && self.stale_threshold_s.is_finite()) {
            return Err(Error::Config("stale_threshold_s must be positive".into()));
        }
        Ok(())
    }
}

/// One tracked feature in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureObservation {
    pub id: u64,
    /// Pinhole-normalized image coordinates.
    pub uv: Vector2<f64>,
    /// Image-plane velocity of `uv` [1/s].
    pub velocity: Vector2<f64>,
    pub depth: Option<f64>,
    pub track_length: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMeasurement {
    pub camera_id: u32,
    pub timestamp: f64,
    pub observations: Vec<FeatureObservation>,
    /// Observations continued from the previous frame of this camera.
    pub tracked_count: usize,
}

/// Splits `total` into integers proportional to `weights` by largest-remainder
/// apportionment. Ties in the remainder go to the lower index. All-zero
/// weights give an equal split.
pub fn apportion(weights: &[usize], total: usize) -> Vec<usize> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: u128 = weights.iter().map(|&w| w as u128).sum();
    let (weights, sum): (Vec<u128>, u128) = if sum == 0 {
        (vec![1; weights.len()], weights.len() as u128)
    } else {
        (weights.iter().map(|&w| w as u128).collect(), sum)
    };
    let total = total as u128;
    let mut out: Vec<usize> = weights.iter().map(|w| (w * total / sum) as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Stable sort keeps lower indices first among equal remainders.
    order.sort_by_key(|&i| std::cmp::Reverse(weights[i] * total % sum));
    for &i in order.iter().take(total as usize - assigned) {
        out[i] += 1;
    }
    out
}

/// Budgets proportional to the tracked counts, with every entry raised to at
/// least `min_budget` and the excess taken proportionally from the others.
/// When `total` cannot cover the floor for everyone the split is equal.
pub fn allocate_feature_budget(tracked: &[usize], total: usize, min_budget: usize) -> Vec<usize> {
    let n = tracked.len();
    if n == 0 {
        return Vec::new();
    }
    if min_budget * n >= total {
        return apportion(&vec![1; n], total);
    }
    let mut clamped = vec![false; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| !clamped[i]).collect();
        let remaining = total - min_budget * (n - free.len());
        let weights: Vec<usize> = free.iter().map(|&i| tracked[i]).collect();
        let shares = apportion(&weights, remaining);
        let mut changed = false;
        for (k, &i) in free.iter().enumerate() {
            if shares[k] < min_budget {
                clamped[i] = true;
                changed = true;
            }
        }
        if !changed {
            let mut out = vec![min_budget; n];
            for (k, &i) in free.iter().enumerate() {
                out[i] = shares[k];
            }
            return out;
        }
    }
}

#[derive(Clone, Debug)]
struct CameraSlot {
    id: u32,
    budget: usize,
    tracked: usize,
    last_forwarded: f64,
    live: bool,
    pending: Option<FrameMeasurement>,
    dropped: u64,
    forwarded: u64,
}

/// Per-camera counters exposed for logging.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraStats {
    pub camera_id: u32,
    pub budget: usize,
    pub tracked: usize,
    pub live: bool,
    pub forwarded: u64,
    pub dropped: u64,
    pub last_forwarded: f64,
}

/// Budget ledger plus one pending slot per camera.
#[derive(Clone, Debug)]
pub struct Coordinator {
    config: CoordinatorConfig,
    cameras: Vec<CameraSlot>,
    /// Timestamp of the most recently forwarded frame of any camera.
    newest_forwarded: f64,
}

impl Coordinator {
    pub fn new(config: CoordinatorConfig, camera_ids: &[u32], start_time: f64) -> Result<Self> {
        config.validate()?;
        if camera_ids.is_empty() {
            return Err(Error::Config("at least one camera is required".into()));
        }
        let mut ids = camera_ids.to_vec();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate camera id".into()));
        }
        let cameras = ids
            .into_iter()
            .map(|id| CameraSlot {
                id,
                budget: 0,
                tracked: 0,
                last_forwarded: start_time,
                live: true,
                pending: None,
                dropped: 0,
                forwarded: 0,
            })
            .collect();
        let mut c = Self {
            config,
            cameras,
            newest_forwarded: f64::NEG_INFINITY,
        };
        c.allocate_budget();
        Ok(c)
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    fn slot(&self, id: u32) -> Result<&CameraSlot> {
        self.cameras.iter().find(|c| c.id == id).ok_or(Error::UnknownCamera(id))
    }

    fn slot_mut(&mut self, id: u32) -> Result<&mut CameraSlot> {
        self.cameras
            .iter_mut()
            .find(|c| c.id == id)
            .ok_or(Error::UnknownCamera(id))
    }

    /// Recomputes the budgets of the live cameras from their tracked counts.
    /// Cameras that are not live keep a zero budget.
    pub fn allocate_budget(&mut self) {
        if !self.config.allocate {
            let equal = apportion(&vec![1; self.cameras.len()], self.config.total_feature_budget);
            for (c, b) in self.cameras.iter_mut().zip(equal) {
                c.budget = b;
            }
            return;
        }
        let live: Vec<usize> = (0..self.cameras.len()).filter(|&i| self.cameras[i].live).collect();
        let tracked: Vec<usize> = live.iter().map(|&i| self.cameras[i].tracked).collect();
        let budgets = allocate_feature_budget(&tracked, self.config.total_feature_budget, self.config.min_budget);
        for c in &mut self.cameras {
            c.budget = 0;
        }
        for (k, &i) in live.iter().enumerate() {
            self.cameras[i].budget = budgets[k];
        }
    }

    pub fn budget(&self, id: u32) -> Result<usize> {
        Ok(self.slot(id)?.budget)
    }

    pub fn is_live(&self, id: u32) -> Result<bool> {
        Ok(self.slot(id)?.live)
    }

    pub fn camera_ids(&self) -> Vec<u32> {
        self.cameras.iter().map(|c| c.id).collect()
    }

    pub fn stats(&self) -> Vec<CameraStats> {
        self.cameras
            .iter()
            .map(|c| CameraStats {
                camera_id: c.id,
                budget: c.budget,
                tracked: c.tracked,
                live: c.live,
                forwarded: c.forwarded,
                dropped: c.dropped,
                last_forwarded: c.last_forwarded,
            })
            .collect()
    }

    pub fn feature_priority(&self, id: u32) -> Result<f64> {
        Ok(self.slot(id)?.budget as f64 / self.config.total_feature_budget as f64)
    }

    pub fn time_priority(&self, id: u32, now: f64) -> Result<f64> {
        let dt = (now - self.slot(id)?.last_forwarded).max(0.0);
        Ok((-self.config.priority_decay_k * dt).exp())
    }

    pub fn pending_count(&self) -> usize {
        self.cameras.iter().filter(|c| c.pending.is_some()).count()
    }

    pub fn has_pending(&self, id: u32) -> Result<bool> {
        Ok(self.slot(id)?.pending.is_some())
    }

    /// Stores `frame` in its camera's pending slot, replacing (and counting)
    /// any frame still waiting there, then re-allocates budgets.
    pub fn submit_frame(&mut self, frame: FrameMeasurement) -> Result<()> {
        let slot = self.slot_mut(frame.camera_id)?;
        slot.tracked = frame.tracked_count;
        if slot.pending.replace(frame).is_some() {
            slot.dropped += 1;
        }
        slot.live = true;
        self.allocate_budget();
        Ok(())
    }

    /// Marks cameras that have neither been forwarded for longer than the
    /// staleness threshold nor have a frame waiting as not live.
    fn update_liveness(&mut self, now: f64) -> bool {
        let tau = self.config.stale_threshold_s;
        let mut changed = false;
        for c in &mut self.cameras {
            if c.live && c.pending.is_none() && now - c.last_forwarded > tau {
                c.live = false;
                changed = true;
            }
        }
        if changed {
            self.allocate_budget();
        }
        changed
    }

    /// Picks at most one pending frame for the back end and records it as
    /// forwarded.
    ///
    /// Frames not newer than the last forwarded frame are discarded, since the
    /// back end consumes frames in time order. A camera whose pending frame
    /// has waited long enough is served first (earliest frame first).
    /// Otherwise the score is `max(P_f, 1 - P_t)` with `P_t` evaluated at the
    /// frame timestamp; ties go to the earliest frame, then the lowest id.
    pub fn select_next_frame(&mut self, now: f64) -> Option<FrameMeasurement> {
        for c in &mut self.cameras {
            if c.pending.as_ref().is_some_and(|f| f.timestamp <= self.newest_forwarded) {
                c.pending = None;
                c.dropped += 1;
            }
        }
        self.update_liveness(now);

        let guard = STARVATION_GUARD_FRACTION * self.config.stale_threshold_s;
        let total = self.config.total_feature_budget as f64;
        let k = self.config.priority_decay_k;
        let mut best: Option<(bool, f64, f64, usize)> = None;
        for (i, c) in self.cameras.iter().enumerate() {
            let Some(f) = &c.pending else { continue };
            let wait = (f.timestamp - c.last_forwarded).max(0.0);
            let urgent = wait >= guard;
            let score = (c.budget as f64 / total).max(1.0 - (-k * wait).exp());
            let better = match best {
                None => true,
                Some((bu, bs, bt, _)) => {
                    if urgent != bu {
                        urgent
                    } else if urgent {
                        f.timestamp < bt
                    } else if score != bs {
                        score > bs
                    } else {
                        f.timestamp < bt
                    }
                }
            };
            if better {
                best = Some((urgent, score, f.timestamp, i));
            }
        }
        let (_, _, _, i) = best?;
        let frame = self.cameras[i].pending.take()?;
        self.on_frame_forwarded(frame.camera_id, frame.timestamp).ok()?;
        Some(frame)
    }

    /// Records that a frame of camera `id` captured at `timestamp` reached
    /// the back end.
    pub fn on_frame_forwarded(&mut self, id: u32, timestamp: f64) -> Result<()> {
        let slot = self.slot_mut(id)?;
        slot.last_forwarded = timestamp;
        slot.pending = None;
        slot.forwarded += 1;
        let revived = !slot.live;
        slot.live = true;
        self.newest_forwarded = self.newest_forwarded.max(timestamp);
        if revived {
            self.allocate_budget();
        }
        Ok(())
    }
}

/// A [`Coordinator`] shared between front-end producer threads and the
/// back-end consumer. Every call locks the whole ledger.
#[derive(Clone, Debug)]
pub struct SharedCoordinator(Arc<Mutex<Coordinator>>);

impl SharedCoordinator {
    pub fn new(inner: Coordinator) -> Self {
        Self(Arc::new(Mutex::new(inner)))
    }

    pub fn submit_frame(&self, frame: FrameMeasurement) -> Result<()> {
        self.0.lock().submit_frame(frame)
    }

    pub fn select_next_frame(&self, now: f64) -> Option<FrameMeasurement> {
        self.0.lock().select_next_frame(now)
    }

    pub fn budget(&self, id: u32) -> Result<usize> {
        self.0.lock().budget(id)
    }

    pub fn stats(&self) -> Vec<CameraStats> {
        self.0.lock().stats()
    }

    pub fn with<T>(&self, f: impl FnOnce(&mut Coordinator) -> T) -> T {
        f(&mut self.0.lock())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(camera_id: u32, timestamp: f64, tracked: usize) -> FrameMeasurement {
        FrameMeasurement {
            camera_id,
            timestamp,
            observations: Vec::new(),
            tracked_count: tracked,
        }
    }

    fn config(total: usize) -> CoordinatorConfig {
        CoordinatorConfig {
            total_feature_budget: total,
            ..Default::default()
        }
    }

    #[test]
    fn proportional_allocation() {
        assert_eq!(allocate_feature_budget(&[50, 30, 20], 200, 10), vec![100, 60, 40]);
        assert_eq!(allocate_feature_budget(&[30, 30, 40], 100, 10), vec![30, 30, 40]);
        assert_eq!(allocate_feature_budget(&[1, 1, 1], 100, 10), vec![34, 33, 33]);
    }

    #[test]
    fn zero_tracked_splits_equally() {
        assert_eq!(allocate_feature_budget(&[0, 0, 0, 0], 350, 10), vec![88, 88, 87, 87]);
    }

    #[test]
    fn floor_takes_from_others() {
        let b = allocate_feature_budget(&[0, 100, 300], 350, 10);
        assert_eq!(b, vec![10, 85, 255]);
    }

    #[test]
    fn priorities() {
        let mut c = Coordinator::new(config(200), &[0, 1], 0.0).unwrap();
        c.submit_frame(frame(0, 0.0, 150)).unwrap();
        c.submit_frame(frame(1, 0.0, 50)).unwrap();
        assert_eq!(c.feature_priority(1).unwrap(), 0.25);
        assert_eq!(c.time_priority(0, 0.0).unwrap(), 1.0);
        assert!((c.time_priority(0, 0.5).unwrap() - (-1.0f64).exp()).abs() < 1e-15);

        let single = Coordinator::new(config(200), &[3], 0.0).unwrap();
        assert_eq!(single.feature_priority(3).unwrap(), 1.0);
    }

    #[test]
    fn replacement_counts_drops() {
        let mut c = Coordinator::new(config(200), &[0, 1, 2], 0.0).unwrap();
        c.submit_frame(frame(0, 0.1, 10)).unwrap();
        c.submit_frame(frame(0, 0.2, 10)).unwrap();
        c.submit_frame(frame(1, 0.2, 10)).unwrap();
        c.submit_frame(frame(2, 0.2, 10)).unwrap();
        assert_eq!(c.pending_count(), 3);
        assert_eq!(c.stats()[0].dropped, 1);
        assert!(matches!(c.submit_frame(frame(9, 0.3, 1)), Err(Error::UnknownCamera(9))));
    }

    #[test]
    fn higher_feature_priority_wins() {
        let mut c = Coordinator::new(config(200), &[0, 1], 0.0).unwrap();
        c.submit_frame(frame(1, 0.1, 50)).unwrap();
        c.submit_frame(frame(0, 0.1, 150)).unwrap();
        assert_eq!(c.budget(0).unwrap(), 150);
        let f = c.select_next_frame(0.1).unwrap();
        assert_eq!(f.camera_id, 0);
        let f = c.select_next_frame(0.2);
        assert!(f.is_none(), "older frame of camera 1 must be discarded");
    }

    #[test]
    fn silent_camera_goes_stale_and_recovers() {
        let mut c = Coordinator::new(config(350), &[0, 1, 2], 0.0).unwrap();
        let mut t = 0.0;
        while t < 3.0 {
            t += 1.0 / 30.0;
            c.submit_frame(frame(0, t, 100)).unwrap();
            c.submit_frame(frame(1, t, 100)).unwrap();
            c.select_next_frame(t);
        }
        assert!(!c.is_live(2).unwrap());
        assert_eq!(c.budget(0).unwrap() + c.budget(1).unwrap(), 350);
        t += 1.0 / 30.0;
        c.submit_frame(frame(2, t, 20)).unwrap();
        assert!(c.is_live(2).unwrap());
        let f = c.select_next_frame(t).unwrap();
        assert_eq!(f.camera_id, 2);
        assert!(c.is_live(2).unwrap());
        let sum: usize = c.stats().iter().map(|s| s.budget).sum();
        assert_eq!(sum, 350);
    }

    #[test]
    fn forwards_record_times() {
        let mut c = Coordinator::new(config(100), &[0], 0.0).unwrap();
        c.on_frame_forwarded(0, 1.0).unwrap();
        assert!((c.time_priority(0, 1.5).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        c.on_frame_forwarded(0, 2.0).unwrap();
        assert_eq!(c.stats()[0].last_forwarded, 2.0);
        assert_eq!(c.stats()[0].forwarded, 2);
    }
}
