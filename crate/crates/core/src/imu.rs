//! IMU pre-integration, the relative-motion residual between two window
//! nodes, and high-rate state propagation.
//!
//! Deltas are integrated in the body frame of the first sample: rotation
//! with the midpoint angular rate, velocity and position with Simpson
//! weights on the rotated specific force; gravity is not part of the delta and enters only in
//! [`imu_residual`]. The 15-dim error state is ordered
//! `(δp, δθ, δv, δb_a, δb_g)`, matching [`crate::backend::state`].

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::backend::state::{ImuState, BA, BG, P, R, STATE_DIM, V};
use crate::error::{Error, Result};
use crate::manifold::{right_jacobian, right_jacobian_inv, skew, Rotation};

pub type Matrix15 = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type Vector15 = SVector<f64, STATE_DIM>;

/// World gravity vector used throughout the estimator [m/s²].
pub fn gravity_vector(magnitude: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -magnitude)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(timestamp: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self {
            timestamp,
            gyro,
            accel,
        }
    }

    /// Linear interpolation between two samples at time `t`.
    pub fn interpolate(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
        let span = b.timestamp - a.timestamp;
        let s = if span > 0.0 { (t - a.timestamp) / span } else { 0.0 };
        ImuSample {
            timestamp: t,
            gyro: a.gyro + (b.gyro - a.gyro) * s,
            accel: a.accel + (b.accel - a.accel) * s,
        }
    }
}

/// Continuous-time noise densities of the inertial sensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuNoiseParams {
    /// [rad/s/√Hz]
    pub gyro_noise_density: f64,
    /// [m/s²/√Hz]
    pub accel_noise_density: f64,
    /// [rad/s²/√Hz]
    pub gyro_bias_random_walk: f64,
    /// [m/s³/√Hz]
    pub accel_bias_random_walk: f64,
    /// [m/s²]
    pub gravity_magnitude: f64,
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        Self {
            gyro_noise_density: 0.0008,
            accel_noise_density: 0.002,
            gyro_bias_random_walk: 1e-5,
            accel_bias_random_walk: 1e-4,
            gravity_magnitude: 9.81,
        }
    }
}

impl ImuNoiseParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_random_walk,
            self.accel_bias_random_walk,
            self.gravity_magnitude,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("IMU noise parameters must be positive: {self:?}")))
        }
    }
}

/// Bias changes beyond these norms should trigger re-integration.
pub const REINTEGRATE_GYRO_BIAS: f64 = 1e-2;
pub const REINTEGRATE_ACCEL_BIAS: f64 = 1e-1;

/// Relative motion between two nodes, expressed in the body frame of the first.
#[derive(Clone, Debug)]
pub struct PreintegrationDelta {
    pub start_time: f64,
    pub duration: f64,
    pub delta_rotation: Rotation,
    pub delta_velocity: Vector3<f64>,
    pub delta_position: Vector3<f64>,
    /// Accelerometer bias the deltas were integrated with.
    pub bias_accel: Vector3<f64>,
    /// Gyroscope bias the deltas were integrated with.
    pub bias_gyro: Vector3<f64>,
    /// d(end error state)/d(start error state); the bias columns hold the
    /// bias Jacobians of the deltas.
    pub jacobian: Matrix15,
    pub covariance: Matrix15,
}

/// First-order bias-corrected deltas.
#[derive(Clone, Copy, Debug)]
pub struct CorrectedDelta {
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
    /// Set when the bias change is large enough that the first-order
    /// correction should be replaced by re-integration.
    pub reintegrate: bool,
}

impl PreintegrationDelta {
    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration
    }

    pub fn dp_dba(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(P, BA).into_owned()
    }
    pub fn dp_dbg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(P, BG).into_owned()
    }
    pub fn dq_dbg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(R, BG).into_owned()
    }
    pub fn dv_dba(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(V, BA).into_owned()
    }
    pub fn dv_dbg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(V, BG).into_owned()
    }

    /// Jacobians of `(Δq, Δv, Δp)` (rows) w.r.t. `(δb_a, δb_g)` (columns).
    pub fn bias_jacobian(&self) -> SMatrix<f64, 9, 6> {
        let mut j = SMatrix::<f64, 9, 6>::zeros();
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.dq_dbg());
        j.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.dv_dba());
        j.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.dv_dbg());
        j.fixed_view_mut::<3, 3>(6, 0).copy_from(&self.dp_dba());
        j.fixed_view_mut::<3, 3>(6, 3).copy_from(&self.dp_dbg());
        j
    }

    pub fn bias_corrected_delta(
        &self,
        new_bias_accel: &Vector3<f64>,
        new_bias_gyro: &Vector3<f64>,
    ) -> CorrectedDelta {
        let dba = new_bias_accel - self.bias_accel;
        let dbg = new_bias_gyro - self.bias_gyro;
        CorrectedDelta {
            rotation: self.delta_rotation.plus(&(self.dq_dbg() * dbg)),
            velocity: self.delta_velocity + self.dv_dba() * dba + self.dv_dbg() * dbg,
            position: self.delta_position + self.dp_dba() * dba + self.dp_dbg() * dbg,
            reintegrate: dbg.norm() > REINTEGRATE_GYRO_BIAS || dba.norm() > REINTEGRATE_ACCEL_BIAS,
        }
    }

    /// Upper-triangular `L` with `LᵀL = covariance⁻¹`.
    pub fn sqrt_information(&self) -> Matrix15 {
        sqrt_information(&self.covariance)
    }
}

pub(crate) fn sqrt_information<const D: usize>(
    cov: &SMatrix<f64, D, D>,
) -> SMatrix<f64, D, D> {
    let sym = 0.5 * (cov + cov.transpose());
    let mut jitter = 0.0;
    for _ in 0..8 {
        let m = sym + SMatrix::<f64, D, D>::identity() * jitter;
        if let Some(ch) = m.cholesky() {
            let info = ch.inverse();
            let info = 0.5 * (info + info.transpose());
            if let Some(ich) = info.cholesky() {
                return ich.l().transpose();
            }
        }
        jitter = if jitter == 0.0 {
            1e-12 * sym.diagonal().max().max(1e-30)
        } else {
            jitter * 100.0
        };
    }
    SMatrix::<f64, D, D>::identity()
}

/// Rotation vector over `dt` for a body rate varying linearly from `w0`
/// to `w1`, including the coning correction.
#[inline]
fn rotation_increment(w0: &Vector3<f64>, w1: &Vector3<f64>, dt: f64) -> Vector3<f64> {
    0.5 * (w0 + w1) * dt + (dt * dt / 12.0) * w0.cross(w1)
}

/// Incremental pre-integrator.
#[derive(Clone, Debug)]
pub struct Preintegrator {
    noise: ImuNoiseParams,
    bias_accel: Vector3<f64>,
    bias_gyro: Vector3<f64>,
    start_time: f64,
    last: ImuSample,
    delta_rotation: Rotation,
    delta_velocity: Vector3<f64>,
    delta_position: Vector3<f64>,
    jacobian: Matrix15,
    covariance: Matrix15,
}

impl Preintegrator {
    pub fn new(
        first: ImuSample,
        bias_accel: Vector3<f64>,
        bias_gyro: Vector3<f64>,
        noise: ImuNoiseParams,
    ) -> Self {
        Self {
            noise,
            bias_accel,
            bias_gyro,
            start_time: first.timestamp,
            last: first,
            delta_rotation: Rotation::identity(),
            delta_velocity: Vector3::zeros(),
            delta_position: Vector3::zeros(),
            jacobian: Matrix15::identity(),
            covariance: Matrix15::zeros(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.last.timestamp - self.start_time
    }

    pub fn covariance(&self) -> &Matrix15 {
        &self.covariance
    }

    pub fn push(&mut self, sample: &ImuSample) -> Result<()> {
        let dt = sample.timestamp - self.last.timestamp;
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::NonMonotonicTimestamps {
                index: 0,
                timestamp: sample.timestamp,
            });
        }
        let a0 = self.last.accel - self.bias_accel;
        let a1 = sample.accel - self.bias_accel;
        let am = 0.5 * (a0 + a1);
        let w = 0.5 * (self.last.gyro + sample.gyro) - self.bias_gyro;
        let w_half = 0.75 * self.last.gyro + 0.25 * sample.gyro - self.bias_gyro;

        // Rotation advances with the mean rate plus the second-order coning
        // term of a linearly varying rate; velocity and position use
        // Simpson weights over (start, half step, end).
        let (g0, g1) = (self.last.gyro - self.bias_gyro, sample.gyro - self.bias_gyro);
        let half = Rotation::exp(&(rotation_increment(&g0, &(0.5 * (g0 + g1)), 0.5 * dt)));
        let step = Rotation::exp(&rotation_increment(&g0, &g1, dt));
        let r0 = self.delta_rotation.matrix();
        let rm = (self.delta_rotation * half).matrix();
        let q1 = self.delta_rotation * step;
        let r1 = q1.matrix();
        let (f0, fm, f1) = (r0 * a0, rm * am, r1 * a1);
        self.delta_position += self.delta_velocity * dt + dt * dt * (f0 / 6.0 + fm / 3.0);
        self.delta_velocity += dt / 6.0 * (f0 + 4.0 * fm + f1);
        self.delta_rotation = q1;

        // Error-state transition.
        let e_half = half.matrix().transpose();
        let e_full = step.matrix().transpose();
        let jr_half = right_jacobian(&(w_half * (0.5 * dt)));
        let jr_full = right_jacobian(&(w * dt));
        let b_half = -jr_half * (0.5 * dt);
        let b_full = -jr_full * dt;
        let r0a0 = r0 * skew(&a0);
        let rmam = rm * skew(&am);
        let r1a1 = r1 * skew(&a1);
        let f_vr = -dt / 6.0 * (r0a0 + 4.0 * rmam * e_half + r1a1 * e_full);
        let f_vba = -dt / 6.0 * (r0 + 4.0 * rm + r1);
        let f_vbg = -dt / 6.0 * (4.0 * rmam * b_half + r1a1 * b_full);
        let f_pr = -dt * dt * (r0a0 / 6.0 + rmam * e_half / 3.0);
        let f_pba = -dt * dt * (r0 / 6.0 + rm / 3.0);
        let f_pbg = -dt * dt / 3.0 * rmam * b_half;

        let mut f = Matrix15::identity();
        f.fixed_view_mut::<3, 3>(P, R).copy_from(&f_pr);
        f.fixed_view_mut::<3, 3>(P, V).copy_from(&(Matrix3::identity() * dt));
        f.fixed_view_mut::<3, 3>(P, BA).copy_from(&f_pba);
        f.fixed_view_mut::<3, 3>(P, BG).copy_from(&f_pbg);
        f.fixed_view_mut::<3, 3>(R, R).copy_from(&e_full);
        f.fixed_view_mut::<3, 3>(R, BG).copy_from(&b_full);
        f.fixed_view_mut::<3, 3>(V, R).copy_from(&f_vr);
        f.fixed_view_mut::<3, 3>(V, BA).copy_from(&f_vba);
        f.fixed_view_mut::<3, 3>(V, BG).copy_from(&f_vbg);

        // Noise input: (n_a0, n_g0, n_a1, n_g1, n_ba, n_bg).
        let mut g = SMatrix::<f64, STATE_DIM, 18>::zeros();
        g.fixed_view_mut::<3, 3>(V, 0).copy_from(&(dt / 6.0 * (r0 + 2.0 * rm)));
        g.fixed_view_mut::<3, 3>(P, 0).copy_from(&(dt * dt / 6.0 * (r0 + rm)));
        g.fixed_view_mut::<3, 3>(V, 6).copy_from(&(dt / 6.0 * (2.0 * rm + r1)));
        g.fixed_view_mut::<3, 3>(P, 6).copy_from(&(dt * dt / 6.0 * rm));
        let g_full = 0.5 * jr_full * dt;
        for (col, weight) in [(3, 0.75), (9, 0.25)] {
            let g_half = weight * jr_half * (0.5 * dt);
            let g_vg = -dt / 6.0 * (4.0 * rmam * g_half + r1a1 * g_full);
            let g_pg = -dt * dt / 3.0 * rmam * g_half;
            g.fixed_view_mut::<3, 3>(R, col).copy_from(&g_full);
            g.fixed_view_mut::<3, 3>(V, col).copy_from(&g_vg);
            g.fixed_view_mut::<3, 3>(P, col).copy_from(&g_pg);
        }
        g.fixed_view_mut::<3, 3>(BA, 12).copy_from(&(Matrix3::identity() * dt));
        g.fixed_view_mut::<3, 3>(BG, 15).copy_from(&(Matrix3::identity() * dt));

        // Each raw sample feeds two steps, so the per-step white noise
        // variance is doubled to keep the accumulated variance at σ²T.
        let na = 2.0 * self.noise.accel_noise_density.powi(2) / dt;
        let ng = 2.0 * self.noise.gyro_noise_density.powi(2) / dt;
        let nba = self.noise.accel_bias_random_walk.powi(2) / dt;
        let nbg = self.noise.gyro_bias_random_walk.powi(2) / dt;
        let q = SVector::<f64, 18>::from_iterator(
            [na, ng, na, ng, nba, nbg]
                .into_iter()
                .flat_map(|v| std::iter::repeat_n(v, 3)),
        );

        self.jacobian = f * self.jacobian;
        let gq = g * SMatrix::<f64, 18, 18>::from_diagonal(&q);
        self.covariance = f * self.covariance * f.transpose() + gq * g.transpose();
        self.covariance = 0.5 * (self.covariance + self.covariance.transpose());
        self.last = *sample;
        Ok(())
    }

    pub fn finish(&self) -> PreintegrationDelta {
        PreintegrationDelta {
            start_time: self.start_time,
            duration: self.duration(),
            delta_rotation: self.delta_rotation,
            delta_velocity: self.delta_velocity,
            delta_position: self.delta_position,
            bias_accel: self.bias_accel,
            bias_gyro: self.bias_gyro,
            jacobian: self.jacobian,
            covariance: self.covariance,
        }
    }
}

/// Pre-integrates `samples` (first to last) at the given linearization biases.
pub fn preintegrate(
    samples: &[ImuSample],
    bias_accel: &Vector3<f64>,
    bias_gyro: &Vector3<f64>,
    noise: &ImuNoiseParams,
) -> Result<PreintegrationDelta> {
    if samples.len() < 2 {
        return Err(Error::DegenerateInterval(samples.len()));
    }
    let mut pre = Preintegrator::new(samples[0], *bias_accel, *bias_gyro, *noise);
    for (index, s) in samples.iter().enumerate().skip(1) {
        pre.push(s).map_err(|_| Error::NonMonotonicTimestamps {
            index,
            timestamp: s.timestamp,
        })?;
    }
    Ok(pre.finish())
}

/// Extracts the samples spanning `[t0, t1]` from a time-sorted stream, with
/// interpolated samples exactly at both ends.
pub fn samples_between(stream: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>> {
    let gap = || Error::ImuGap { from: t0, to: t1 };
    if stream.is_empty() || t1 <= t0 {
        return Err(gap());
    }
    let first = stream.first().unwrap().timestamp;
    let last = stream.last().unwrap().timestamp;
    if t0 < first - 1e-12 || t1 > last + 1e-12 {
        return Err(gap());
    }
    let at = |t: f64| -> ImuSample {
        let i = stream.partition_point(|s| s.timestamp < t);
        if i == 0 {
            ImuSample { timestamp: t, ..stream[0] }
        } else if i >= stream.len() {
            ImuSample { timestamp: t, ..stream[stream.len() - 1] }
        } else {
            ImuSample::interpolate(&stream[i - 1], &stream[i], t)
        }
    };
    let lo = stream.partition_point(|s| s.timestamp <= t0);
    let hi = stream.partition_point(|s| s.timestamp < t1);
    let mut out = Vec::with_capacity(hi.saturating_sub(lo) + 2);
    out.push(at(t0));
    out.extend(
        stream[lo..hi]
            .iter()
            .filter(|s| s.timestamp - t0 > 1e-9 && t1 - s.timestamp > 1e-9)
            .copied(),
    );
    out.push(at(t1));
    Ok(out)
}

/// Residual of the IMU factor and its Jacobians w.r.t. both node states.
#[derive(Clone, Debug)]
pub struct ImuResidual {
    pub residual: Vector15,
    pub jac_from: Matrix15,
    pub jac_to: Matrix15,
}

pub fn imu_residual(
    delta: &PreintegrationDelta,
    from: &ImuState,
    to: &ImuState,
    gravity: &Vector3<f64>,
) -> ImuResidual {
    let t = delta.duration;
    let dba = from.bias_accel - delta.bias_accel;
    let dbg = from.bias_gyro - delta.bias_gyro;
    let dq_dbg = delta.dq_dbg();
    let phi = dq_dbg * dbg;
    let corr_q = delta.delta_rotation.plus(&phi);
    let corr_v = delta.delta_velocity + delta.dv_dba() * dba + delta.dv_dbg() * dbg;
    let corr_p = delta.delta_position + delta.dp_dba() * dba + delta.dp_dbg() * dbg;

    let ri = from.orientation.matrix();
    let rj = to.orientation.matrix();
    let rit = ri.transpose();
    let dp = to.position - from.position - from.velocity * t - 0.5 * gravity * t * t;
    let dv = to.velocity - from.velocity - gravity * t;
    let err_rot = corr_q.inverse() * from.orientation.inverse() * to.orientation;
    let r_theta = err_rot.log();

    let mut residual = Vector15::zeros();
    residual.fixed_rows_mut::<3>(P).copy_from(&(rit * dp - corr_p));
    residual.fixed_rows_mut::<3>(R).copy_from(&r_theta);
    residual.fixed_rows_mut::<3>(V).copy_from(&(rit * dv - corr_v));
    residual.fixed_rows_mut::<3>(BA).copy_from(&(to.bias_accel - from.bias_accel));
    residual.fixed_rows_mut::<3>(BG).copy_from(&(to.bias_gyro - from.bias_gyro));

    let jr_inv = right_jacobian_inv(&r_theta);
    let mut ji = Matrix15::zeros();
    ji.fixed_view_mut::<3, 3>(P, P).copy_from(&(-rit));
    ji.fixed_view_mut::<3, 3>(P, R).copy_from(&skew(&(rit * dp)));
    ji.fixed_view_mut::<3, 3>(P, V).copy_from(&(-rit * t));
    ji.fixed_view_mut::<3, 3>(P, BA).copy_from(&(-delta.dp_dba()));
    ji.fixed_view_mut::<3, 3>(P, BG).copy_from(&(-delta.dp_dbg()));
    ji.fixed_view_mut::<3, 3>(R, R).copy_from(&(-jr_inv * rj.transpose() * ri));
    ji.fixed_view_mut::<3, 3>(R, BG)
        .copy_from(&(-jr_inv * err_rot.matrix().transpose() * right_jacobian(&phi) * dq_dbg));
    ji.fixed_view_mut::<3, 3>(V, R).copy_from(&skew(&(rit * dv)));
    ji.fixed_view_mut::<3, 3>(V, V).copy_from(&(-rit));
    ji.fixed_view_mut::<3, 3>(V, BA).copy_from(&(-delta.dv_dba()));
    ji.fixed_view_mut::<3, 3>(V, BG).copy_from(&(-delta.dv_dbg()));
    ji.fixed_view_mut::<3, 3>(BA, BA).copy_from(&(-Matrix3::identity()));
    ji.fixed_view_mut::<3, 3>(BG, BG).copy_from(&(-Matrix3::identity()));

    let mut jj = Matrix15::zeros();
    jj.fixed_view_mut::<3, 3>(P, P).copy_from(&rit);
    jj.fixed_view_mut::<3, 3>(R, R).copy_from(&jr_inv);
    jj.fixed_view_mut::<3, 3>(V, V).copy_from(&rit);
    jj.fixed_view_mut::<3, 3>(BA, BA).copy_from(&Matrix3::identity());
    jj.fixed_view_mut::<3, 3>(BG, BG).copy_from(&Matrix3::identity());

    ImuResidual {
        residual,
        jac_from: ji,
        jac_to: jj,
    }
}

/// Predicts the state at the end of `delta` from `from` (exact inverse of
/// [`imu_residual`] for the position/rotation/velocity blocks).
pub fn predict_state(delta: &PreintegrationDelta, from: &ImuState, gravity: &Vector3<f64>) -> ImuState {
    let c = delta.bias_corrected_delta(&from.bias_accel, &from.bias_gyro);
    let t = delta.duration;
    ImuState {
        timestamp: from.timestamp + t,
        position: from.position
            + from.velocity * t
            + 0.5 * gravity * t * t
            + from.orientation.rotate(&c.position),
        velocity: from.velocity + gravity * t + from.orientation.rotate(&c.velocity),
        orientation: from.orientation * c.rotation,
        bias_accel: from.bias_accel,
        bias_gyro: from.bias_gyro,
    }
}

/// One step of world-frame strapdown propagation, using the same
/// quadrature as [`Preintegrator::push`].
pub fn propagate_step(
    state: &ImuState,
    s0: &ImuSample,
    s1: &ImuSample,
    gravity: &Vector3<f64>,
) -> ImuState {
    let dt = s1.timestamp - s0.timestamp;
    let (g0, g1) = (s0.gyro - state.bias_gyro, s1.gyro - state.bias_gyro);
    let mid = state.orientation.plus(&rotation_increment(&g0, &(0.5 * (g0 + g1)), 0.5 * dt));
    let orientation = state.orientation.plus(&rotation_increment(&g0, &g1, dt));
    let a0 = state.orientation.rotate(&(s0.accel - state.bias_accel)) + gravity;
    let am = mid.rotate(&(0.5 * (s0.accel + s1.accel) - state.bias_accel)) + gravity;
    let a1 = orientation.rotate(&(s1.accel - state.bias_accel)) + gravity;
    ImuState {
        timestamp: s1.timestamp,
        position: state.position + state.velocity * dt + dt * dt * (a0 / 6.0 + am / 3.0),
        velocity: state.velocity + dt / 6.0 * (a0 + 4.0 * am + a1),
        orientation,
        ..*state
    }
}

/// Propagates `start` through every sample newer than it, returning one
/// state per sample.
pub fn propagate_high_rate(
    start: &ImuState,
    samples: &[ImuSample],
    gravity: &Vector3<f64>,
) -> Vec<ImuState> {
    let mut prop = HighRatePropagator::new(*gravity);
    for s in samples {
        prop.push(*s);
    }
    prop.rebase(*start)
}

/// Emits an IMU-rate state for every incoming sample, re-based whenever a
/// new optimized state becomes available.
#[derive(Clone, Debug)]
pub struct HighRatePropagator {
    gravity: Vector3<f64>,
    base_time: Option<f64>,
    current: Option<ImuState>,
    /// Samples not older than the base time, plus the last one before it.
    buffer: VecDeque<ImuSample>,
}

impl HighRatePropagator {
    pub fn new(gravity: Vector3<f64>) -> Self {
        Self {
            gravity,
            base_time: None,
            current: None,
            buffer: VecDeque::new(),
        }
    }

    pub fn latest(&self) -> Option<&ImuState> {
        self.current.as_ref()
    }

    /// Buffers a sample and, once based, returns the propagated state.
    pub fn push(&mut self, sample: ImuSample) -> Option<ImuState> {
        if let Some(prev) = self.buffer.back() {
            if sample.timestamp <= prev.timestamp {
                return None;
            }
        }
        let prev = self.buffer.back().copied();
        self.buffer.push_back(sample);
        let current = self.current?;
        let prev = prev?;
        if sample.timestamp <= current.timestamp {
            return None;
        }
        let start = if prev.timestamp < current.timestamp {
            ImuSample::interpolate(&prev, &sample, current.timestamp)
        } else {
            prev
        };
        let next = propagate_step(&current, &start, &sample, &self.gravity);
        self.current = Some(next);
        Some(next)
    }

    /// Swaps in a new optimized state and replays buffered samples newer than it.
    pub fn rebase(&mut self, optimized: ImuState) -> Vec<ImuState> {
        let t = optimized.timestamp;
        while self.buffer.len() >= 2 && self.buffer[1].timestamp <= t {
            self.buffer.pop_front();
        }
        self.base_time = Some(t);
        let mut state = optimized;
        let mut out = Vec::new();
        let mut prev: Option<ImuSample> = None;
        for s in self.buffer.iter() {
            if let Some(p) = prev {
                if s.timestamp > t {
                    let start = if p.timestamp < state.timestamp {
                        ImuSample::interpolate(&p, s, state.timestamp)
                    } else {
                        p
                    };
                    state = propagate_step(&state, &start, s, &self.gravity);
                    out.push(state);
                }
            }
            prev = Some(*s);
        }
        self.current = Some(state);
        out
    }
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut s = String::with_capacity(samples.len() * 96);
    s.push_str("timestamp,wx,wy,wz,ax,ay,az\n");
    for m in samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            m.timestamp, m.gyro.x, m.gyro.y, m.gyro.z, m.accel.x, m.accel.y, m.accel.z
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("timestamp") {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        if vals.len() != 7 {
            return Err(Error::parse(path, lineno + 1, format!("expected 7 fields, got {}", vals.len())));
        }
        out.push(ImuSample::new(
            vals[0],
            Vector3::new(vals[1], vals[2], vals[3]),
            Vector3::new(vals[4], vals[5], vals[6]),
        ));
    }
    Ok(out)
}
