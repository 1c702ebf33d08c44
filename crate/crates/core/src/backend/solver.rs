//! Levenberg–Marquardt over the window.
//!
//! Landmarks are one-dimensional and eliminated in closed form, so the dense
//! system only spans node states and calibration variables.

use std::collections::BTreeMap;

use log::trace;
use nalgebra::{Cholesky, DMatrix, DVector, SMatrix, Vector2, Vector3};

use crate::backend::factors::{
    anchor_depth_residual, depth_error, depth_residual, huber, visual_error, visual_residual,
};
use crate::backend::marginalization::MarginalizationPrior;
use crate::backend::state::{NodeId, VarKey, VarValue};
use crate::backend::window::{LandmarkKey, Window};
use crate::imu::imu_residual;
use crate::manifold::{right_jacobian_inv, PoseTangent};

const STEP_TOL: f64 = 1e-10;
const INITIAL_DAMPING: f64 = 1e-4;
const MAX_DAMPING: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SolveReport {
    /// Accepted steps.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Normal equations could not be solved at any damping.
    pub singular: bool,
}

/// Offsets of the dense variables.
#[derive(Clone, Debug)]
pub struct Layout {
    pub keys: Vec<VarKey>,
    offsets: BTreeMap<VarKey, usize>,
    pub dim: usize,
}

impl Layout {
    pub fn new(keys: Vec<VarKey>) -> Self {
        let mut offsets = BTreeMap::new();
        let mut dim = 0;
        for k in &keys {
            offsets.insert(*k, dim);
            dim += k.dim();
        }
        Self { keys, offsets, dim }
    }

    pub fn offset(&self, key: &VarKey) -> Option<usize> {
        self.offsets.get(key).copied()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Subset<'a, T> {
    All,
    Only(&'a [T]),
}

/// Which factors take part in a linearization.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Selection<'a> {
    pub prior: bool,
    pub calibration_priors: bool,
    pub edges: Subset<'a, usize>,
    pub landmarks: Subset<'a, LandmarkKey>,
}

impl Selection<'_> {
    pub fn all() -> Self {
        Selection {
            prior: true,
            calibration_priors: true,
            edges: Subset::All,
            landmarks: Subset::All,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LandmarkBlock {
    pub key: LandmarkKey,
    pub h_ll: f64,
    pub b_l: f64,
    pub coupling: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub(crate) struct Linearization {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub landmarks: Vec<LandmarkBlock>,
    pub cost: f64,
}

impl Linearization {
    /// Landmark-free normal equations with damping `mu`.
    pub fn reduced(&self, mu: f64) -> (DMatrix<f64>, DVector<f64>) {
        let mut h = self.h.clone();
        let mut b = self.b.clone();
        if mu > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += mu * (h[(i, i)] + 1e-6);
            }
        }
        let n = h.nrows();
        let hs = h.as_mut_slice();
        for l in &self.landmarks {
            let inv = 1.0 / (l.h_ll * (1.0 + mu) + 1e-12);
            for &(j, vj) in &l.coupling {
                b[j] -= vj * l.b_l * inv;
                let col = &mut hs[j * n..(j + 1) * n];
                let s = vj * inv;
                for &(i, vi) in &l.coupling {
                    col[i] -= vi * s;
                }
            }
        }
        (h, b)
    }

    pub fn back_substitute(&self, dx: &DVector<f64>, mu: f64) -> Vec<f64> {
        self.landmarks
            .iter()
            .map(|l| {
                let hll = l.h_ll * (1.0 + mu) + 1e-12;
                let c: f64 = l.coupling.iter().map(|&(i, v)| v * dx[i]).sum();
                -(l.b_l + c) / hll
            })
            .collect()
    }
}

type Jac2x6 = SMatrix<f64, 2, 6>;

/// Jacobian of one residual block w.r.t. a contiguous run of at most six
/// dense columns.
#[derive(Clone, Copy)]
struct Segment {
    offset: usize,
    len: usize,
    j: Jac2x6,
}

/// Up to two residual rows over at most four dense segments plus one
/// landmark. A one-row block keeps its second row zero.
struct RowBlock {
    segments: [Segment; 4],
    n: usize,
    jl: Vector2<f64>,
    r: Vector2<f64>,
}

impl RowBlock {
    fn new() -> Self {
        Self {
            segments: [Segment {
                offset: 0,
                len: 0,
                j: Jac2x6::zeros(),
            }; 4],
            n: 0,
            jl: Vector2::zeros(),
            r: Vector2::zeros(),
        }
    }

    fn push(&mut self, offset: usize, len: usize, j: Jac2x6) {
        self.segments[self.n] = Segment { offset, len, j };
        self.n += 1;
    }
}

/// Dense accumulator plus a scratch area for the current landmark's
/// coupling column.
struct Accumulator {
    h: DMatrix<f64>,
    b: DVector<f64>,
    coupling: Vec<f64>,
    touched: Vec<usize>,
    marked: Vec<bool>,
    h_ll: f64,
    b_l: f64,
    cost: f64,
    jacobians: bool,
}

impl Accumulator {
    fn add_block(&mut self, blk: &RowBlock, weight: f64) {
        if !self.jacobians {
            return;
        }
        let segs = &blk.segments[..blk.n];
        for (k, s) in segs.iter().enumerate() {
            let jt = s.j.transpose() * weight;
            let g = jt * blk.r;
            let cl = jt * blk.jl;
            for i in 0..s.len {
                let ia = s.offset + i;
                self.b[ia] += g[i];
                if !self.marked[ia] {
                    self.marked[ia] = true;
                    self.touched.push(ia);
                }
                self.coupling[ia] += cl[i];
            }
            for t in &segs[k..] {
                let m = jt * t.j;
                let mut view = self.h.view_mut((s.offset, t.offset), (s.len, t.len));
                view += m.view((0, 0), (s.len, t.len));
                if t.offset != s.offset {
                    let mut view = self.h.view_mut((t.offset, s.offset), (t.len, s.len));
                    view += m.view((0, 0), (s.len, t.len)).transpose();
                }
            }
        }
        self.h_ll += weight * blk.jl.norm_squared();
        self.b_l += weight * blk.jl.dot(&blk.r);
    }

    fn finish_landmark(&mut self, key: LandmarkKey, out: &mut Vec<LandmarkBlock>) {
        if !self.jacobians {
            return;
        }
        let mut coupling: Vec<(usize, f64)> = self.touched.iter().map(|&i| (i, self.coupling[i])).collect();
        coupling.sort_by_key(|c| c.0);
        for &i in &self.touched {
            self.coupling[i] = 0.0;
            self.marked[i] = false;
        }
        self.touched.clear();
        if self.h_ll > 0.0 {
            out.push(LandmarkBlock {
                key,
                h_ll: self.h_ll,
                b_l: self.b_l,
                coupling,
            });
        }
        self.h_ll = 0.0;
        self.b_l = 0.0;
    }

    fn add_dense(&mut self, idx: &[usize], jac: &DMatrix<f64>, r: &DVector<f64>) {
        self.cost += r.norm_squared();
        if !self.jacobians {
            return;
        }
        let jt = jac.transpose();
        let hh = &jt * jac;
        let g = jt * r;
        for (a, &ia) in idx.iter().enumerate() {
            self.b[ia] += g[a];
            for (c, &ic) in idx.iter().enumerate() {
                self.h[(ia, ic)] += hh[(a, c)];
            }
        }
    }
}

fn range(offset: usize, len: usize) -> Vec<usize> {
    (offset..offset + len).collect()
}

/// Evaluates the selected factors at the window's current values. With
/// `jacobians` false only the cost is computed.
pub(crate) fn linearize(window: &Window, layout: &Layout, sel: &Selection, jacobians: bool) -> Linearization {
    let dim = if jacobians { layout.dim } else { 0 };
    let mut acc = Accumulator {
        h: DMatrix::zeros(dim, dim),
        b: DVector::zeros(dim),
        coupling: vec![0.0; dim],
        touched: Vec::new(),
        marked: vec![false; dim],
        h_ll: 0.0,
        b_l: 0.0,
        cost: 0.0,
        jacobians,
    };
    let mut landmarks = Vec::new();

    if sel.prior {
        if let Some(prior) = &window.prior {
            let values: Vec<VarValue> = prior.keys.iter().map(|k| window.value(k)).collect();
            let (r, jac) = prior.evaluate(&values);
            let mut idx = Vec::with_capacity(prior.dim());
            for k in &prior.keys {
                let off = layout.offset(k).expect("prior variable in layout");
                idx.extend(off..off + k.dim());
            }
            acc.add_dense(&idx, &jac, &r);
        }
    }

    let edge_ids: Vec<usize> = match sel.edges {
        Subset::All => (0..window.edges.len()).collect(),
        Subset::Only(e) => e.to_vec(),
    };
    for k in edge_ids {
        let edge = &window.edges[k];
        let (a, b) = (&window.nodes[k], &window.nodes[k + 1]);
        let res = imu_residual(&edge.delta, &a.state, &b.state, &window.gravity);
        let l = &edge.sqrt_information;
        let r = DVector::from_column_slice((l * res.residual).as_slice());
        let oa = layout.offset(&VarKey::Node(a.id)).expect("node in layout");
        let ob = layout.offset(&VarKey::Node(b.id)).expect("node in layout");
        let mut jac = DMatrix::zeros(15, 30);
        jac.view_mut((0, 0), (15, 15)).copy_from(&(l * res.jac_from));
        jac.view_mut((0, 15), (15, 15)).copy_from(&(l * res.jac_to));
        let mut idx = range(oa, 15);
        idx.extend(ob..ob + 15);
        acc.add_dense(&idx, &jac, &r);
    }

    if sel.calibration_priors {
        for (&id, cam) in &window.cameras {
            if let Some(off) = layout.offset(&VarKey::TimeOffset(id)) {
                let s = window.config.td_prior_sigma;
                let r = DVector::from_element(1, (cam.extrinsics.time_offset - cam.nominal_time_offset) / s);
                acc.add_dense(&[off], &DMatrix::from_element(1, 1, 1.0 / s), &r);
            }
            if let Some(off) = layout.offset(&VarKey::Extrinsics(id)) {
                let (st, sr) = (
                    window.config.extrinsic_translation_sigma,
                    window.config.extrinsic_rotation_sigma,
                );
                let d = cam.extrinsics.body_from_camera.minus(&cam.nominal_extrinsics);
                let mut r = DVector::zeros(6);
                r.rows_mut(0, 3).copy_from(&(d.translation / st));
                r.rows_mut(3, 3).copy_from(&(d.rotation / sr));
                let mut jac = DMatrix::zeros(6, 6);
                jac.view_mut((0, 0), (3, 3)).fill_with_identity();
                jac.view_mut((0, 0), (3, 3)).scale_mut(1.0 / st);
                jac.view_mut((3, 3), (3, 3)).copy_from(&(right_jacobian_inv(&d.rotation) / sr));
                acc.add_dense(&range(off, 6), &jac, &r);
            }
        }
    }

    let delta = window.config.huber_scale;
    let keys: Vec<LandmarkKey> = match sel.landmarks {
        Subset::All => window.landmarks.keys().copied().collect(),
        Subset::Only(k) => k.to_vec(),
    };
    for key in keys {
        let lm = &window.landmarks[&key];
        if !lm.is_constrained() {
            continue;
        }
        let cam = &window.cameras[&lm.camera_id];
        let ext = &cam.extrinsics.body_from_camera;
        let td = cam.extrinsics.time_offset;
        let off_e = layout.offset(&VarKey::Extrinsics(lm.camera_id));
        let off_t = layout.offset(&VarKey::TimeOffset(lm.camera_id));
        let anchor = lm.anchor();
        let anchor_node = window.node(anchor.node).expect("anchor in window");
        let anchor_pose = anchor_node.state.pose();
        let off_a = layout.offset(&VarKey::Node(anchor.node)).expect("node in layout");
        let (ws, wd) = (1.0 / cam.pixel_sigma, 1.0 / cam.depth_sigma);

        if let Some(d) = anchor.depth {
            let (r, jl) = anchor_depth_residual(lm.inv_depth, d);
            let (w, c) = huber((r * wd).powi(2), delta);
            acc.cost += c;
            let mut blk = RowBlock::new();
            blk.r[0] = r * wd;
            blk.jl[0] = jl * wd;
            acc.add_block(&blk, w);
        }
        for obs in &lm.observations[1..] {
            let node = window.node(obs.node).expect("observation in window");
            let pose = node.state.pose();
            if !jacobians {
                if let Some(r) = visual_error(&anchor_pose, &anchor.point, &pose, &obs.point, lm.inv_depth, ext, td) {
                    acc.cost += huber((r * ws).norm_squared(), delta).1;
                }
                if let Some(d) = obs.depth {
                    if let Some(r) = depth_error(&anchor_pose, &anchor.point, &pose, d, lm.inv_depth, ext, td) {
                        acc.cost += huber((r * wd).powi(2), delta).1;
                    }
                }
                continue;
            }
            let off_j = layout.offset(&VarKey::Node(obs.node)).expect("node in layout");
            if let Some((r, jac)) = visual_residual(&anchor_pose, &anchor.point, &pose, &obs.point, lm.inv_depth, ext, td) {
                let rw = r * ws;
                let (w, c) = huber(rw.norm_squared(), delta);
                acc.cost += c;
                let mut blk = RowBlock::new();
                blk.r = rw;
                blk.jl = jac.inv_depth * ws;
                blk.push(off_a, 6, jac.pose_anchor * ws);
                blk.push(off_j, 6, jac.pose_target * ws);
                if let Some(o) = off_e {
                    blk.push(o, 6, jac.extrinsics * ws);
                }
                if let Some(o) = off_t {
                    let mut j = Jac2x6::zeros();
                    j.set_column(0, &(jac.time_offset * ws));
                    blk.push(o, 1, j);
                }
                acc.add_block(&blk, w);
            }
            if let Some(d) = obs.depth {
                if let Some((r, jac)) = depth_residual(&anchor_pose, &anchor.point, &pose, d, lm.inv_depth, ext, td) {
                    let (w, c) = huber((r * wd).powi(2), delta);
                    acc.cost += c;
                    let mut blk = RowBlock::new();
                    blk.r[0] = r * wd;
                    blk.jl[0] = jac.inv_depth * wd;
                    let pad = |m: &SMatrix<f64, 1, 6>| {
                        let mut out = Jac2x6::zeros();
                        out.row_mut(0).copy_from(&(m * wd));
                        out
                    };
                    blk.push(off_a, 6, pad(&jac.pose_anchor));
                    blk.push(off_j, 6, pad(&jac.pose_target));
                    if let Some(o) = off_e {
                        blk.push(o, 6, pad(&jac.extrinsics));
                    }
                    if let Some(o) = off_t {
                        let mut j = Jac2x6::zeros();
                        j[(0, 0)] = jac.time_offset * wd;
                        blk.push(o, 1, j);
                    }
                    acc.add_block(&blk, w);
                }
            }
        }
        acc.finish_landmark(key, &mut landmarks);
    }

    Linearization {
        h: acc.h,
        b: acc.b,
        landmarks,
        cost: acc.cost,
    }
}

/// Total cost of all factors at the current window values.
pub fn total_cost(window: &Window) -> f64 {
    let layout = Layout::new(window.variables());
    linearize(window, &layout, &Selection::all(), false).cost
}

/// Applies a tangent step to the dense variables and landmark inverse depths.
pub fn retract(window: &mut Window, layout: &Layout, dx: &DVector<f64>, landmarks: &[LandmarkKey], dl: &[f64]) {
    for key in &layout.keys {
        let off = layout.offset(key).expect("layout key");
        let v = match window.value(key) {
            VarValue::Node(s) => VarValue::Node(s.plus(&dx.fixed_rows::<15>(off).into_owned())),
            VarValue::Extrinsics(p) => VarValue::Extrinsics(p.plus(&PoseTangent {
                translation: dx.fixed_rows::<3>(off).into_owned(),
                rotation: dx.fixed_rows::<3>(off + 3).into_owned(),
            })),
            VarValue::TimeOffset(t) => {
                let m = crate::backend::state::CameraExtrinsics::MAX_TIME_OFFSET * 0.999;
                VarValue::TimeOffset((t + dx[off]).clamp(-m, m))
            }
        };
        window.set_value(key, v);
    }
    let (lo, hi) = (window.config.min_inv_depth, window.config.max_inv_depth);
    for (key, d) in landmarks.iter().zip(dl) {
        let lm = window.landmarks.get_mut(key).expect("landmark");
        lm.inv_depth = (lm.inv_depth + d).clamp(lo, hi);
    }
}

struct Snapshot {
    values: Vec<VarValue>,
    inv_depths: Vec<f64>,
}

fn snapshot(window: &Window, layout: &Layout, landmarks: &[LandmarkKey]) -> Snapshot {
    Snapshot {
        values: layout.keys.iter().map(|k| window.value(k)).collect(),
        inv_depths: landmarks.iter().map(|k| window.landmarks[k].inv_depth).collect(),
    }
}

fn restore(window: &mut Window, layout: &Layout, landmarks: &[LandmarkKey], s: &Snapshot) {
    for (k, v) in layout.keys.iter().zip(&s.values) {
        window.set_value(k, *v);
    }
    for (k, v) in landmarks.iter().zip(&s.inv_depths) {
        window.landmarks.get_mut(k).expect("landmark").inv_depth = *v;
    }
}

/// Minimizes the window cost by Levenberg–Marquardt. The window is left at
/// the best iterate found.
pub fn optimize(window: &mut Window) -> SolveReport {
    let layout = Layout::new(window.variables());
    let sel = Selection::all();
    let mut cost = linearize(window, &layout, &sel, false).cost;
    let mut report = SolveReport {
        initial_cost: cost,
        final_cost: cost,
        ..Default::default()
    };
    if window.nodes.len() < 2 {
        report.converged = true;
        return report;
    }
    let mut mu = INITIAL_DAMPING;
    'outer: for _ in 0..window.config.max_iterations {
        let lin = linearize(window, &layout, &sel, true);
        let keys: Vec<LandmarkKey> = lin.landmarks.iter().map(|l| l.key).collect();
        loop {
            let (h, b) = lin.reduced(mu);
            let Some(chol) = Cholesky::new(h) else {
                mu *= 10.0;
                if mu > MAX_DAMPING {
                    report.singular = true;
                    break 'outer;
                }
                continue;
            };
            let dx = chol.solve(&(-&b));
            let dl = lin.back_substitute(&dx, mu);
            let step = (dx.norm_squared() + dl.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if step < STEP_TOL {
                report.converged = true;
                break 'outer;
            }
            let before = snapshot(window, &layout, &keys);
            retract(window, &layout, &dx, &keys, &dl);
            let new_cost = linearize(window, &layout, &sel, false).cost;
            if new_cost.is_finite() && new_cost <= cost {
                let rel = (cost - new_cost) / cost.max(1e-300);
                cost = new_cost;
                report.iterations += 1;
                mu = (mu / 3.0).max(1e-10);
                if rel < window.config.relative_cost_tolerance {
                    report.converged = true;
                    break 'outer;
                }
                break;
            }
            restore(window, &layout, &keys, &before);
            mu *= 10.0;
            if mu > MAX_DAMPING {
                report.converged = true;
                break 'outer;
            }
        }
    }
    report.final_cost = cost;
    trace!(
        "optimize: {} iterations, cost {:.6e} -> {:.6e}",
        report.iterations,
        report.initial_cost,
        report.final_cost
    );
    report
}

/// Folds the prior, the first IMU edge and the given landmarks (all of
/// which must be observed by `oldest`) into a new prior without `oldest`.
pub(crate) fn marginalize(window: &Window, oldest: NodeId, landmarks: &[LandmarkKey]) -> Option<MarginalizationPrior> {
    let layout = Layout::new(window.variables());
    let edges = [0usize];
    let sel = Selection {
        prior: true,
        calibration_priors: false,
        edges: if window.edges.is_empty() {
            Subset::Only(&[])
        } else {
            Subset::Only(&edges)
        },
        landmarks: Subset::Only(landmarks),
    };
    let lin = linearize(window, &layout, &sel, true);
    let (h, b) = lin.reduced(0.0);
    let oldest_key = VarKey::Node(oldest);
    let mut marg = Vec::new();
    let mut keep = Vec::new();
    let mut keep_keys = Vec::new();
    for key in &layout.keys {
        let off = layout.offset(key).expect("layout key");
        let dims = off..off + key.dim();
        if *key == oldest_key {
            marg.extend(dims);
        } else if dims.clone().any(|i| h.row(i).iter().any(|v| *v != 0.0)) {
            keep.extend(dims);
            keep_keys.push(*key);
        }
    }
    if keep.is_empty() {
        return None;
    }
    let (hs, bs) = crate::backend::marginalization::schur_complement(&h, &b, &marg, &keep);
    let values = keep_keys.iter().map(|k| window.value(k)).collect();
    Some(MarginalizationPrior::from_information(keep_keys, values, &hs, &bs))
}

/// Whitened reprojection error norms of every non-anchor observation, as
/// (landmark, observation index, error).
pub fn reprojection_errors(window: &Window) -> Vec<(LandmarkKey, usize, f64)> {
    let mut out = Vec::new();
    for (key, lm) in &window.landmarks {
        let cam = &window.cameras[&lm.camera_id];
        let anchor = lm.anchor();
        let anchor_pose = window.node(anchor.node).expect("anchor").state.pose();
        for (i, obs) in lm.observations.iter().enumerate().skip(1) {
            let pose = window.node(obs.node).expect("node").state.pose();
            let e = visual_residual(
                &anchor_pose,
                &anchor.point,
                &pose,
                &obs.point,
                lm.inv_depth,
                &cam.extrinsics.body_from_camera,
                cam.extrinsics.time_offset,
            )
            .map_or(f64::INFINITY, |(r, _)| r.norm() / cam.pixel_sigma);
            out.push((*key, i, e));
        }
    }
    out
}

/// Drops observations whose whitened reprojection error exceeds the
/// configured threshold. A landmark that loses more than half of its
/// non-anchor observations is removed entirely (its anchor is suspect).
pub fn reject_outliers(window: &mut Window) -> usize {
    let threshold = window.config.outlier_threshold;
    let errors = reprojection_errors(window);
    let mut per_landmark: BTreeMap<LandmarkKey, (usize, Vec<usize>)> = BTreeMap::new();
    for (key, i, e) in errors {
        let entry = per_landmark.entry(key).or_default();
        entry.0 += 1;
        if !(e <= threshold) {
            entry.1.push(i);
        }
    }
    let mut removed = 0;
    for (key, (total, bad)) in per_landmark {
        if bad.is_empty() {
            continue;
        }
        removed += bad.len();
        if 2 * bad.len() > total && total >= 2 {
            window.landmarks.remove(&key);
            continue;
        }
        let lm = window.landmarks.get_mut(&key).expect("landmark");
        for &i in bad.iter().rev() {
            lm.observations.remove(i);
        }
    }
    window.stats.outliers_removed += removed;
    removed
}

/// Stacked whitened residuals (without robust weighting) of every factor,
/// for checking the solver against independent batch solutions.
pub fn stacked_residuals(window: &Window) -> DVector<f64> {
    let mut out: Vec<f64> = Vec::new();
    if let Some(prior) = &window.prior {
        let values: Vec<VarValue> = prior.keys.iter().map(|k| window.value(k)).collect();
        out.extend(prior.evaluate(&values).0.iter());
    }
    for (k, edge) in window.edges.iter().enumerate() {
        let res = imu_residual(&edge.delta, &window.nodes[k].state, &window.nodes[k + 1].state, &window.gravity);
        out.extend((edge.sqrt_information * res.residual).iter());
    }
    for cam in window.cameras.values() {
        if cam.extrinsics.estimate_time_offset {
            out.push((cam.extrinsics.time_offset - cam.nominal_time_offset) / window.config.td_prior_sigma);
        }
        if cam.extrinsics.estimate_extrinsics {
            let d = cam.extrinsics.body_from_camera.minus(&cam.nominal_extrinsics);
            out.extend((d.translation / window.config.extrinsic_translation_sigma).iter());
            out.extend((d.rotation / window.config.extrinsic_rotation_sigma).iter());
        }
    }
    for lm in window.landmarks.values() {
        if !lm.is_constrained() {
            continue;
        }
        let cam = &window.cameras[&lm.camera_id];
        let anchor = lm.anchor();
        let anchor_pose = window.node(anchor.node).expect("anchor").state.pose();
        if let Some(d) = anchor.depth {
            out.push(anchor_depth_residual(lm.inv_depth, d).0 / cam.depth_sigma);
        }
        for obs in &lm.observations[1..] {
            let pose = window.node(obs.node).expect("node").state.pose();
            let ext = &cam.extrinsics.body_from_camera;
            let td = cam.extrinsics.time_offset;
            let r = visual_residual(&anchor_pose, &anchor.point, &pose, &obs.point, lm.inv_depth, ext, td)
                .map_or(Vector3::from_element(f64::NAN).xy(), |(r, _)| r);
            out.extend((r / cam.pixel_sigma).iter());
            if let Some(d) = obs.depth {
                let r = depth_residual(&anchor_pose, &anchor.point, &pose, d, lm.inv_depth, ext, td).map_or(f64::NAN, |v| v.0);
                out.push(r / cam.depth_sigma);
            }
        }
    }
    DVector::from_vec(out)
}
