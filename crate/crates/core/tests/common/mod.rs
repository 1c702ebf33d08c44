//! Oracles and synthetic problems shared by the integration tests and the
//! acceptance run.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Quaternion, SMatrix, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcvio::backend::factors::{depth_residual, visual_residual, ObservationPoint};
use mcvio::backend::marginalization::{schur_complement, MarginalizationPrior};
use mcvio::backend::state::{CameraExtrinsics, ImuState, StateTangent, VarKey, VarValue};
use mcvio::backend::window::{BackendConfig, CameraModel, Window};
use mcvio::coordinator::{FeatureObservation, FrameMeasurement};
use mcvio::imu::{
    gravity_vector, imu_residual, predict_state, preintegrate, samples_between, ImuNoiseParams, ImuSample,
    PreintegrationDelta,
};
use mcvio::manifold::{Pose, PoseTangent, Rotation};
use mcvio::sim::Mount;

pub const FD_EPS: f64 = 1e-6;

pub fn v3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

// ---------------------------------------------------------------------------
// Pre-integration

/// Random smooth IMU stream (sums of low-frequency sinusoids) around a
/// hovering specific force.
pub fn random_stream(seed: u64, duration: f64, rate: f64) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64)> = (0..18)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(0.05..0.6),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let eval = |axis: usize, t: f64| -> f64 {
        terms[axis * 3..axis * 3 + 3]
            .iter()
            .map(|(a, f, ph)| a * (std::f64::consts::TAU * f * t + ph).sin())
            .sum()
    };
    let n = (duration * rate).round() as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / rate;
            ImuSample::new(
                t,
                Vector3::new(eval(0, t), eval(1, t), eval(2, t)) * 0.3,
                Vector3::new(eval(3, t), eval(4, t), 9.81 + eval(5, t)),
            )
        })
        .collect()
}

/// Integrates the piecewise-linear interpolation of `samples` with classic
/// RK4 at `substeps` steps per sample interval.
pub fn rk4_oracle(
    samples: &[ImuSample],
    ba: &Vector3<f64>,
    bg: &Vector3<f64>,
    substeps: usize,
) -> (UnitQuaternion<f64>, Vector3<f64>, Vector3<f64>) {
    let mut q = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    let mut v = Vector3::zeros();
    let mut p = Vector3::zeros();
    for w in samples.windows(2) {
        let (s0, s1) = (&w[0], &w[1]);
        let dt = s1.timestamp - s0.timestamp;
        let h = dt / substeps as f64;
        let input = |tau: f64| {
            let s = tau / dt;
            (
                s0.gyro + (s1.gyro - s0.gyro) * s - bg,
                s0.accel + (s1.accel - s0.accel) * s - ba,
            )
        };
        let deriv = |q: &Quaternion<f64>, v: &Vector3<f64>, tau: f64| {
            let (om, acc) = input(tau);
            let qdot = q * Quaternion::new(0.0, om.x, om.y, om.z) * 0.5;
            let rot = UnitQuaternion::new_normalize(*q);
            (qdot, rot * acc, *v)
        };
        for k in 0..substeps {
            let tau = k as f64 * h;
            let (k1q, k1v, k1p) = deriv(&q, &v, tau);
            let (k2q, k2v, k2p) = deriv(&(q + k1q * (h / 2.0)), &(v + k1v * (h / 2.0)), tau + h / 2.0);
            let (k3q, k3v, k3p) = deriv(&(q + k2q * (h / 2.0)), &(v + k2v * (h / 2.0)), tau + h / 2.0);
            let (k4q, k4v, k4p) = deriv(&(q + k3q * h), &(v + k3v * h), tau + h);
            q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
            p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
        }
    }
    (UnitQuaternion::new_normalize(q), v, p)
}

/// Largest component error of `d` against the RK4 oracle.
pub fn oracle_error(d: &PreintegrationDelta, oracle: &(UnitQuaternion<f64>, Vector3<f64>, Vector3<f64>)) -> f64 {
    let rot = d.delta_rotation.angle_to(&Rotation::from_unit(oracle.0));
    let vel = (d.delta_velocity - oracle.1).abs().max();
    let pos = (d.delta_position - oracle.2).abs().max();
    rot.max(vel).max(pos)
}

/// Worst error over `seeds` random 1 s, 500 Hz streams against RK4 at 10 kHz.
pub fn worst_rk4_error(seeds: u64) -> f64 {
    let noise = ImuNoiseParams::default();
    let ba = Vector3::new(0.05, -0.03, 0.02);
    let bg = Vector3::new(0.002, 0.001, -0.003);
    (0..seeds)
        .map(|seed| {
            let s = random_stream(seed, 1.0, 500.0);
            let d = preintegrate(&s, &ba, &bg, &noise).unwrap();
            oracle_error(&d, &rk4_oracle(&s, &ba, &bg, 20))
        })
        .fold(0.0, f64::max)
}

/// Worst mismatch between pre-integrating a stream whole and composing the
/// deltas of its two halves, plus the duration mismatch.
pub fn worst_concatenation_error(trials: u64) -> (f64, f64) {
    let noise = ImuNoiseParams::default();
    let ba = Vector3::new(0.02, 0.01, -0.04);
    let bg = Vector3::new(-0.001, 0.002, 0.0005);
    let (mut worst, mut worst_dt) = (0.0f64, 0.0f64);
    for seed in 0..trials {
        let s = random_stream(100 + seed, 1.0, 500.0);
        let split = 137 + (10 * seed as usize) % 300;
        let whole = preintegrate(&s, &ba, &bg, &noise).unwrap();
        let a = preintegrate(&s[..=split], &ba, &bg, &noise).unwrap();
        let b = preintegrate(&s[split..], &ba, &bg, &noise).unwrap();
        let r = a.delta_rotation * b.delta_rotation;
        let v = a.delta_velocity + a.delta_rotation.rotate(&b.delta_velocity);
        let p = a.delta_position + a.delta_velocity * b.duration + a.delta_rotation.rotate(&b.delta_position);
        worst = worst
            .max(whole.delta_rotation.angle_to(&r))
            .max((whole.delta_velocity - v).norm())
            .max((whole.delta_position - p).norm());
        worst_dt = worst_dt.max((whole.duration - a.duration - b.duration).abs());
    }
    (worst, worst_dt)
}

// ---------------------------------------------------------------------------
// Jacobians against central differences

pub fn random_state(rng: &mut ChaCha8Rng, t: f64) -> ImuState {
    ImuState {
        timestamp: t,
        position: v3(rng, 3.0),
        velocity: v3(rng, 1.0),
        orientation: Rotation::exp(&v3(rng, 2.0)),
        bias_accel: v3(rng, 0.1),
        bias_gyro: v3(rng, 0.01),
    }
}

fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(1e-12)
}

/// Worst relative error of the IMU factor Jacobians (both states).
pub fn imu_jacobian_error(configs: u64) -> f64 {
    let noise = ImuNoiseParams::default();
    let g = gravity_vector(9.81);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for seed in 0..configs {
        let s = random_stream(1000 + seed, 0.2, 500.0);
        let d = preintegrate(&s, &Vector3::new(0.02, -0.01, 0.03), &Vector3::new(0.001, 0.0, -0.002), &noise).unwrap();
        let from = random_state(&mut rng, 0.0);
        // Target near the prediction, as the solver sees it.
        let mut kick = StateTangent::zeros();
        for k in 0..15 {
            kick[k] = rng.random_range(-0.05..0.05);
        }
        let to = predict_state(&d, &from, &g).plus(&kick);
        let r = imu_residual(&d, &from, &to, &g);
        for (which, analytic) in [(0, &r.jac_from), (1, &r.jac_to)] {
            let mut numeric = SMatrix::<f64, 15, 15>::zeros();
            for k in 0..15 {
                let mut e = StateTangent::zeros();
                e[k] = FD_EPS;
                let (fp, fm, tp, tm) = if which == 0 {
                    (from.plus(&e), from.plus(&-e), to, to)
                } else {
                    (from, from, to.plus(&e), to.plus(&-e))
                };
                let rp = imu_residual(&d, &fp, &tp, &g).residual;
                let rm = imu_residual(&d, &fm, &tm, &g).residual;
                numeric.set_column(k, &((rp - rm) / (2.0 * FD_EPS)));
            }
            let a = DMatrix::from_column_slice(15, 15, analytic.as_slice());
            let n = DMatrix::from_column_slice(15, 15, numeric.as_slice());
            worst = worst.max(relative_error(&a, &n));
        }
    }
    worst
}

/// Anchor and target poses plus extrinsics with the landmark in front of
/// both cameras.
struct VisualConfig {
    anchor: Pose,
    target: Pose,
    ext: Pose,
    anchor_obs: ObservationPoint,
    target_obs: ObservationPoint,
    inv_depth: f64,
    td: f64,
    depth: f64,
}

fn random_visual_config(rng: &mut ChaCha8Rng) -> VisualConfig {
    let ext = Pose::new(v3(rng, 0.2), Rotation::exp(&v3(rng, 2.0)));
    let anchor = Pose::new(v3(rng, 3.0), Rotation::exp(&v3(rng, 2.0)));
    let target = anchor.plus(&PoseTangent {
        translation: v3(rng, 0.3),
        rotation: v3(rng, 0.2),
    });
    let td = rng.random_range(-0.02..0.02);
    let inv_depth = rng.random_range(0.1..1.0);
    let mut obs = |t_node: f64| ObservationPoint {
        uv: Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
        velocity: Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
        t_cam: t_node + rng.random_range(-0.01..0.01),
        t_node,
    };
    let anchor_obs = obs(0.0);
    let mut target_obs = obs(0.1);
    // Measurement near the prediction so the residual is small.
    let p_c = anchor_obs.ray(td) / inv_depth;
    let world = anchor.transform_point(&ext.transform_point(&p_c));
    let p_cj = target.compose(&ext).inverse_transform_point(&world);
    let shift = target_obs.velocity * (td + target_obs.t_cam - target_obs.t_node);
    target_obs.uv = p_cj.xy() / p_cj.z + shift + Vector2::new(0.01, -0.01);
    VisualConfig {
        anchor,
        target,
        ext,
        anchor_obs,
        target_obs,
        inv_depth,
        td,
        depth: p_cj.z + 0.02,
    }
}

fn in_front(c: &VisualConfig) -> bool {
    let p_c = c.anchor_obs.ray(c.td) / c.inv_depth;
    let world = c.anchor.transform_point(&c.ext.transform_point(&p_c));
    c.target.compose(&c.ext).inverse_transform_point(&world).z > 0.5
}

/// Stacked visual (2) and depth (1) residual as a function of the 20
/// parameters (anchor 6, target 6, λ 1, extrinsics 6, td 1).
fn visual_stack(c: &VisualConfig, d: &[f64; 20]) -> Vector3<f64> {
    let tangent = |o: usize| PoseTangent {
        translation: Vector3::new(d[o], d[o + 1], d[o + 2]),
        rotation: Vector3::new(d[o + 3], d[o + 4], d[o + 5]),
    };
    let anchor = c.anchor.plus(&tangent(0));
    let target = c.target.plus(&tangent(6));
    let lambda = c.inv_depth + d[12];
    let ext = c.ext.plus(&tangent(13));
    let td = c.td + d[19];
    let (r, _) = visual_residual(&anchor, &c.anchor_obs, &target, &c.target_obs, lambda, &ext, td).unwrap();
    let (dr, _) = depth_residual(&anchor, &c.anchor_obs, &target, c.depth, lambda, &ext, td).unwrap();
    Vector3::new(r.x, r.y, dr)
}

fn visual_analytic(c: &VisualConfig) -> SMatrix<f64, 3, 20> {
    let (_, jv) = visual_residual(&c.anchor, &c.anchor_obs, &c.target, &c.target_obs, c.inv_depth, &c.ext, c.td).unwrap();
    let (_, jd) = depth_residual(&c.anchor, &c.anchor_obs, &c.target, c.depth, c.inv_depth, &c.ext, c.td).unwrap();
    let mut j = SMatrix::<f64, 3, 20>::zeros();
    j.fixed_view_mut::<2, 6>(0, 0).copy_from(&jv.pose_anchor);
    j.fixed_view_mut::<2, 6>(0, 6).copy_from(&jv.pose_target);
    j.fixed_view_mut::<2, 1>(0, 12).copy_from(&jv.inv_depth);
    j.fixed_view_mut::<2, 6>(0, 13).copy_from(&jv.extrinsics);
    j.fixed_view_mut::<2, 1>(0, 19).copy_from(&jv.time_offset);
    j.fixed_view_mut::<1, 6>(2, 0).copy_from(&jd.pose_anchor);
    j.fixed_view_mut::<1, 6>(2, 6).copy_from(&jd.pose_target);
    j[(2, 12)] = jd.inv_depth;
    j.fixed_view_mut::<1, 6>(2, 13).copy_from(&jd.extrinsics);
    j[(2, 19)] = jd.time_offset;
    j
}

/// Worst relative errors of the visual and depth Jacobians (all 20
/// parameters), as (visual, depth).
pub fn visual_depth_jacobian_error(configs: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut wv, mut wd) = (0.0f64, 0.0f64);
    let mut checked = 0;
    while checked < configs {
        let c = random_visual_config(&mut rng);
        if !in_front(&c) {
            continue;
        }
        checked += 1;
        let a = visual_analytic(&c);
        let mut n = SMatrix::<f64, 3, 20>::zeros();
        for k in 0..20 {
            let mut dp = [0.0; 20];
            let mut dm = [0.0; 20];
            dp[k] = FD_EPS;
            dm[k] = -FD_EPS;
            n.set_column(k, &((visual_stack(&c, &dp) - visual_stack(&c, &dm)) / (2.0 * FD_EPS)));
        }
        let rel = |r0: usize, rows: usize| (a.rows(r0, rows) - n.rows(r0, rows)).norm() / n.rows(r0, rows).norm().max(1e-12);
        wv = wv.max(rel(0, 2));
        wd = wd.max(rel(2, 1));
    }
    (wv, wd)
}

/// Right perturbation of component `k` of a stacked (node, extrinsics, td)
/// variable list.
fn perturb(values: &[VarValue], k: usize, e: f64) -> Vec<VarValue> {
    let mut vals = values.to_vec();
    let mut off = 0;
    for v in vals.iter_mut() {
        let d = v.dim();
        if k < off + d {
            let i = k - off;
            *v = match *v {
                VarValue::Node(s) => {
                    let mut t = StateTangent::zeros();
                    t[i] = e;
                    VarValue::Node(s.plus(&t))
                }
                VarValue::Extrinsics(p) => {
                    let mut t = PoseTangent {
                        translation: Vector3::zeros(),
                        rotation: Vector3::zeros(),
                    };
                    if i < 3 {
                        t.translation[i] = e;
                    } else {
                        t.rotation[i - 3] = e;
                    }
                    VarValue::Extrinsics(p.plus(&t))
                }
                VarValue::TimeOffset(t) => VarValue::TimeOffset(t + e),
            };
            break;
        }
        off += d;
    }
    vals
}

/// Worst relative error of the marginalization prior Jacobian, evaluated
/// away from its linearization point.
pub fn prior_jacobian_error(configs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let state = random_state(&mut rng, 0.0);
        let ext = Pose::new(v3(&mut rng, 0.2), Rotation::exp(&v3(&mut rng, 2.0)));
        let keys = vec![VarKey::Node(3), VarKey::Extrinsics(0), VarKey::TimeOffset(0)];
        let lin = vec![VarValue::Node(state), VarValue::Extrinsics(ext), VarValue::TimeOffset(0.001)];
        let a = DMatrix::from_fn(25, 22, |_, _| rng.random_range(-1.0..1.0));
        let h = a.transpose() * &a;
        let b = DVector::from_fn(22, |_, _| rng.random_range(-1.0..1.0));
        let prior = MarginalizationPrior::from_information(keys, lin, &h, &b);

        let mut d0 = DVector::from_fn(22, |_, _| rng.random_range(-0.3..0.3));
        d0[21] *= 0.01;
        let values = vec![
            VarValue::Node(state.plus(&d0.fixed_rows::<15>(0).into_owned())),
            VarValue::Extrinsics(ext.plus(&PoseTangent {
                translation: d0.fixed_rows::<3>(15).into_owned(),
                rotation: d0.fixed_rows::<3>(18).into_owned(),
            })),
            VarValue::TimeOffset(0.001 + d0[21]),
        ];
        let (_, analytic) = prior.evaluate(&values);
        let mut numeric = DMatrix::zeros(analytic.nrows(), 22);
        for k in 0..22 {
            let rp = prior.evaluate(&perturb(&values, k, FD_EPS)).0;
            let rm = prior.evaluate(&perturb(&values, k, -FD_EPS)).0;
            numeric.set_column(k, &((rp - rm) / (2.0 * FD_EPS)));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

// ---------------------------------------------------------------------------
// Synthetic windows

/// A motion whose node states are exactly the IMU propagation of the
/// stream, observed by one or more cameras looking at random landmarks.
pub struct Synthetic {
    pub imu: Vec<ImuSample>,
    pub noise: ImuNoiseParams,
    pub cameras: Vec<CameraModel>,
    pub landmarks: Vec<Vector3<f64>>,
    /// True node states, one per frame.
    pub states: Vec<ImuState>,
    pub frames: Vec<FrameMeasurement>,
}

pub struct SyntheticSpec {
    pub seed: u64,
    pub frames: usize,
    /// Time between consecutive frames [s]; cameras take turns.
    pub spacing: f64,
    pub mounts: Vec<Mount>,
    pub landmarks: usize,
    pub pixel_noise: f64,
    pub depth: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            frames: 5,
            spacing: 0.1,
            mounts: vec![Mount::Front],
            landmarks: 40,
            pixel_noise: 0.0,
            depth: false,
        }
    }
}

pub const PIXEL_SIGMA: f64 = 1.0 / 460.0;
pub const DEPTH_SIGMA: f64 = 0.01;

pub fn synthetic(spec: &SyntheticSpec) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = ImuNoiseParams::default();
    let g = gravity_vector(noise.gravity_magnitude);
    let t0 = 0.05;
    let duration = t0 + spec.spacing * spec.frames as f64 + 0.1;
    // Gentle motion: specific force close to hovering.
    let imu: Vec<ImuSample> = random_stream(spec.seed, duration, 500.0)
        .into_iter()
        .map(|s| ImuSample::new(s.timestamp, s.gyro * 0.5, Vector3::new(0.0, 0.0, 9.81) + (s.accel - Vector3::new(0.0, 0.0, 9.81)) * 0.3))
        .collect();

    let cameras: Vec<CameraModel> = spec
        .mounts
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut ext = CameraExtrinsics::new(i as u32, Pose::new(v3(&mut rng, 0.1), m.rotation()));
            ext.depth_capable = spec.depth;
            CameraModel::new(ext, PIXEL_SIGMA, DEPTH_SIGMA)
        })
        .collect();

    let mut states = vec![ImuState {
        timestamp: t0,
        position: Vector3::zeros(),
        velocity: Vector3::new(0.3, -0.1, 0.05),
        orientation: Rotation::from_euler_zyx(0.3, 0.05, -0.02),
        bias_accel: Vector3::zeros(),
        bias_gyro: Vector3::zeros(),
    }];
    for k in 1..spec.frames {
        let prev = states[k - 1];
        let t = t0 + spec.spacing * k as f64;
        let samples = samples_between(&imu, prev.timestamp, t).unwrap();
        let d = preintegrate(&samples, &prev.bias_accel, &prev.bias_gyro, &noise).unwrap();
        states.push(predict_state(&d, &prev, &g));
    }

    // Landmarks spread in front of each camera at the first node.
    let mut landmarks = Vec::new();
    for (i, cam) in cameras.iter().enumerate() {
        let pose = states[0].pose().compose(&cam.extrinsics.body_from_camera);
        for _ in 0..spec.landmarks {
            let z = rng.random_range(2.0..6.0);
            let c = Vector3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.5..0.5) * z, z);
            landmarks.push((i, pose.transform_point(&c)));
        }
    }

    let mut frames = Vec::new();
    for (k, s) in states.iter().enumerate() {
        let cam = &cameras[k % cameras.len()];
        let cam_id = cam.extrinsics.camera_id;
        let pose = s.pose().compose(&cam.extrinsics.body_from_camera);
        let mut observations = Vec::new();
        for (id, (owner, p)) in landmarks.iter().enumerate() {
            if *owner != cam_id as usize {
                continue;
            }
            let c = pose.inverse_transform_point(p);
            if c.z < 0.5 || (c.x / c.z).abs() > 1.0 || (c.y / c.z).abs() > 1.0 {
                continue;
            }
            let n = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * spec.pixel_noise;
            observations.push(FeatureObservation {
                id: id as u64,
                uv: c.xy() / c.z + n,
                velocity: Vector2::zeros(),
                depth: spec.depth.then_some(c.z),
                track_length: 1,
            });
        }
        frames.push(FrameMeasurement {
            camera_id: cam_id,
            timestamp: s.timestamp,
            tracked_count: observations.len(),
            observations,
        });
    }
    Synthetic {
        imu,
        noise,
        cameras,
        landmarks: landmarks.into_iter().map(|(_, p)| p).collect(),
        states,
        frames,
    }
}

pub const PRIOR_SIGMAS: [f64; 15] = [1e-3; 15];

impl Synthetic {
    /// Window holding every frame, node states at the IMU prediction (which
    /// equals the truth) and landmark inverse depths at their true values.
    pub fn window(&self, config: BackendConfig) -> Window {
        let mut w = Window::new(config, self.noise, self.cameras.clone()).unwrap();
        w.insert_first(&self.frames[0], self.states[0], &PRIOR_SIGMAS).unwrap();
        for f in &self.frames[1..] {
            w.insert_frame(f, &self.imu).unwrap();
        }
        self.set_true_depths(&mut w);
        w
    }

    pub fn set_true_depths(&self, w: &mut Window) {
        let nodes: Vec<(u64, ImuState)> = w.nodes().iter().map(|n| (n.id, n.state)).collect();
        let cams = w.cameras.clone();
        for lm in w.landmarks_mut().values_mut() {
            let anchor = lm.observations[0].node;
            let state = nodes.iter().find(|(id, _)| *id == anchor).unwrap().1;
            let ext = cams[&lm.camera_id].extrinsics.body_from_camera;
            let c = state.pose().compose(&ext).inverse_transform_point(&self.landmarks[lm.feature_id as usize]);
            lm.inv_depth = 1.0 / c.z;
        }
    }
}

// ---------------------------------------------------------------------------
// Marginalization

/// Random linear least-squares problem over `m + k` scalar variables where
/// the first `m` are marginalized from the factors that touch them. Returns
/// the largest difference between the retained-variable solution obtained
/// through the prior and the batch solution.
pub fn linear_marginalization_error(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(1..=15);
    let k = rng.random_range(1..=(50 - m).min(35));
    let n = m + k;
    // Factors on (marg, keep) and factors on keep only.
    let rows1 = n + rng.random_range(0..10);
    let rows2 = rng.random_range(1..=k + 5);
    let a1 = DMatrix::from_fn(rows1, n, |_, _| rng.random_range(-1.0..1.0));
    let b1 = DVector::from_fn(rows1, |_, _| rng.random_range(-1.0..1.0));
    let a2 = DMatrix::from_fn(rows2, k, |_, _| rng.random_range(-1.0..1.0));
    let b2 = DVector::from_fn(rows2, |_, _| rng.random_range(-1.0..1.0));

    // Batch: minimize ‖A1 x − b1‖² + ‖A2 x_k − b2‖².
    let mut a = DMatrix::zeros(rows1 + rows2, n);
    a.view_mut((0, 0), (rows1, n)).copy_from(&a1);
    a.view_mut((rows1, m), (rows2, k)).copy_from(&a2);
    let mut b = DVector::zeros(rows1 + rows2);
    b.rows_mut(0, rows1).copy_from(&b1);
    b.rows_mut(rows1, rows2).copy_from(&b2);
    let batch = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &b));

    // Prior from the first factor group, linearized at zero.
    let h1 = a1.transpose() * &a1;
    let g1 = -(a1.transpose() * &b1);
    let marg: Vec<usize> = (0..m).collect();
    let keep: Vec<usize> = (m..n).collect();
    let (hs, gs) = schur_complement(&h1, &g1, &marg, &keep);
    let keys: Vec<VarKey> = (0..k as u32).map(VarKey::TimeOffset).collect();
    let lin = vec![VarValue::TimeOffset(0.0); k];
    let prior = MarginalizationPrior::from_information(keys, lin.clone(), &hs, &gs);
    let (r0, jp) = prior.evaluate(&lin);

    // Minimize ‖r0 + Jp x‖² + ‖A2 x − b2‖².
    let rows = jp.nrows() + rows2;
    let mut j = DMatrix::zeros(rows, k);
    j.view_mut((0, 0), (jp.nrows(), k)).copy_from(&jp);
    j.view_mut((jp.nrows(), 0), (rows2, k)).copy_from(&a2);
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, jp.nrows()).copy_from(&(-r0));
    rhs.rows_mut(jp.nrows(), rows2).copy_from(&b2);
    let reduced = (j.transpose() * &j).cholesky().unwrap().solve(&(j.transpose() * rhs));
    (reduced - batch.rows(m, k)).abs().max()
}

/// Tight solver settings for comparisons against batch optima.
pub fn exact_config() -> BackendConfig {
    BackendConfig {
        window_size: 11,
        max_iterations: 100,
        relative_cost_tolerance: 0.0,
        huber_scale: 1e6,
        outlier_threshold: 1e9,
        ..Default::default()
    }
}

/// Three-node window with noisy observations: optimize to convergence,
/// marginalize the oldest node (and every landmark it sees), push the
/// retained states off the optimum, optimize again and return the largest
/// difference to the full-batch optimum.
pub fn nonlinear_marginalization_error(seed: u64) -> f64 {
    let syn = synthetic(&SyntheticSpec {
        seed,
        frames: 3,
        spacing: 0.15,
        landmarks: 10,
        pixel_noise: 0.5 * PIXEL_SIGMA,
        depth: true,
        ..Default::default()
    });
    let mut w = syn.window(exact_config());
    mcvio::backend::solver::optimize(&mut w);
    let before: Vec<ImuState> = w.nodes()[1..].iter().map(|n| n.state).collect();
    w.marginalize_oldest();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..w.len() {
        let id = w.nodes()[i].id;
        let mut d = StateTangent::zeros();
        for k in 0..15 {
            d[k] = rng.random_range(-1e-3..1e-3);
        }
        let s = w.node(id).unwrap().state.plus(&d);
        w.node_mut(id).unwrap().state = s;
    }
    let report = mcvio::backend::solver::optimize(&mut w);
    assert!(report.iterations > 0);
    w.nodes()
        .iter()
        .zip(&before)
        .map(|(n, b)| n.state.minus(b).abs().max())
        .fold(0.0, f64::max)
}
