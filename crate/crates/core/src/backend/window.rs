//! Window contents and the bookkeeping that keeps them consistent: node
//! insertion, keyframe classification, the per-camera marginalization
//! policy, IMU re-splicing and landmark re-anchoring.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::backend::factors::{landmark_world_point, ObservationPoint, MIN_DEPTH};
use crate::backend::marginalization::MarginalizationPrior;
use crate::backend::state::{CameraExtrinsics, ImuState, NodeId, VarKey, VarValue, STATE_DIM};
use crate::coordinator::FrameMeasurement;
use crate::error::{Error, Result};
use crate::imu::{
    gravity_vector, predict_state, preintegrate, samples_between, ImuNoiseParams, ImuSample, Matrix15,
    PreintegrationDelta, REINTEGRATE_ACCEL_BIAS, REINTEGRATE_GYRO_BIAS,
};
use crate::manifold::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// First node taken from ground truth.
    Oracle,
    /// Gravity direction and gyro bias from an initial rest period.
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub window_size: usize,
    pub huber_scale: f64,
    pub max_iterations: usize,
    /// The solver stops once an accepted step lowers the cost by less than
    /// this fraction.
    pub relative_cost_tolerance: f64,
    pub estimate_td: bool,
    pub estimate_extrinsics: bool,
    pub init_mode: InitMode,
    pub parallax_threshold: f64,
    pub track_threshold: usize,
    /// Whitened reprojection error above which an observation is discarded
    /// after optimization.
    pub outlier_threshold: f64,
    pub default_depth: f64,
    pub triangulation_parallax: f64,
    pub min_inv_depth: f64,
    pub max_inv_depth: f64,
    pub td_prior_sigma: f64,
    pub extrinsic_translation_sigma: f64,
    pub extrinsic_rotation_sigma: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            window_size: 11,
            huber_scale: 1.0,
            max_iterations: 10,
            relative_cost_tolerance: 1e-8,
            estimate_td: false,
            estimate_extrinsics: false,
            init_mode: InitMode::Oracle,
            parallax_threshold: 10.0 / 460.0,
            track_threshold: 20,
            outlier_threshold: 3.0,
            default_depth: 5.0,
            triangulation_parallax: 0.02,
            min_inv_depth: 1e-3,
            max_inv_depth: 1e2,
            td_prior_sigma: 0.01,
            extrinsic_translation_sigma: 0.01,
            extrinsic_rotation_sigma: 0.5f64.to_radians(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 {
            return Err(Error::Config("window_size must be at least 3".into()));
        }
        if !(self.huber_scale > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("huber_scale and max_iterations must be positive".into()));
        }
        if !(self.relative_cost_tolerance >= 0.0) {
            return Err(Error::Config("relative_cost_tolerance must be non-negative".into()));
        }
        if !(self.min_inv_depth > 0.0 && self.min_inv_depth < self.max_inv_depth) {
            return Err(Error::Config("invalid inverse depth range".into()));
        }
        Ok(())
    }
}

/// Calibration and noise model of one camera as used by the back end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub extrinsics: CameraExtrinsics,
    /// Observation noise in normalized image units.
    pub pixel_sigma: f64,
    pub depth_sigma: f64,
    /// Values the weak calibration priors pull towards.
    pub nominal_extrinsics: Pose,
    pub nominal_time_offset: f64,
}

impl CameraModel {
    pub fn new(extrinsics: CameraExtrinsics, pixel_sigma: f64, depth_sigma: f64) -> Self {
        Self {
            nominal_extrinsics: extrinsics.body_from_camera,
            nominal_time_offset: extrinsics.time_offset,
            extrinsics,
            pixel_sigma,
            depth_sigma,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: NodeId,
    pub camera_id: u32,
    pub t_cam: f64,
    pub keyframe: bool,
    pub state: ImuState,
    /// Raw feature positions of the frame, sorted by id.
    pub features: Vec<(u64, Vector2<f64>)>,
}

/// Pre-integrated IMU measurement between two adjacent nodes, with the raw
/// samples kept for re-integration and splicing.
#[derive(Clone, Debug)]
pub struct ImuEdge {
    pub delta: PreintegrationDelta,
    pub sqrt_information: Matrix15,
    pub samples: Vec<ImuSample>,
}

impl ImuEdge {
    pub fn new(samples: Vec<ImuSample>, ba: &Vector3<f64>, bg: &Vector3<f64>, noise: &ImuNoiseParams) -> Result<Self> {
        let delta = preintegrate(&samples, ba, bg, noise)?;
        Ok(Self {
            sqrt_information: delta.sqrt_information(),
            delta,
            samples,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkObservation {
    pub node: NodeId,
    pub point: ObservationPoint,
    pub depth: Option<f64>,
}

pub type LandmarkKey = (u32, u64);

/// Inverse-depth landmark; the first observation is the anchor.
#[derive(Clone, Debug)]
pub struct Landmark {
    pub camera_id: u32,
    pub feature_id: u64,
    pub inv_depth: f64,
    pub observations: Vec<LandmarkObservation>,
    pub triangulated: bool,
}

impl Landmark {
    pub fn anchor(&self) -> &LandmarkObservation {
        &self.observations[0]
    }

    /// True when the landmark takes part in at least one residual.
    pub fn is_constrained(&self) -> bool {
        self.observations.len() > 1 || self.observations[0].depth.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyDecision {
    MarginalizeOldest(NodeId),
    DropLast(NodeId),
}

#[derive(Clone, Debug, Default)]
pub struct WindowStats {
    pub out_of_order: usize,
    pub decisions: Vec<PolicyDecision>,
    pub outliers_removed: usize,
    pub reintegrations: usize,
    pub clipped_eigenvalues: usize,
}

#[derive(Clone, Debug)]
pub struct InsertReport {
    pub node: NodeId,
    pub keyframe: bool,
    pub decision: Option<PolicyDecision>,
    pub new_landmarks: usize,
    pub tracked_landmarks: usize,
}

/// Keyframe test against the same camera's previous node: mean parallax
/// above `parallax` or fewer than `track` common features.
pub fn classify_keyframe(
    previous: Option<&[(u64, Vector2<f64>)]>,
    features: &[(u64, Vector2<f64>)],
    parallax: f64,
    track: usize,
) -> bool {
    let Some(prev) = previous else { return true };
    let (mut i, mut j) = (0, 0);
    let mut common = 0usize;
    let mut sum = 0.0;
    while i < prev.len() && j < features.len() {
        match prev[i].0.cmp(&features[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                sum += (prev[i].1 - features[j].1).norm();
                i += 1;
                j += 1;
            }
        }
    }
    common < track || sum / common as f64 > parallax
}

#[derive(Clone, Debug)]
pub struct Window {
    pub config: BackendConfig,
    pub noise: ImuNoiseParams,
    pub gravity: Vector3<f64>,
    pub cameras: BTreeMap<u32, CameraModel>,
    pub(crate) nodes: Vec<Node>,
    /// `edges[k]` joins `nodes[k]` and `nodes[k + 1]`.
    pub(crate) edges: Vec<ImuEdge>,
    pub(crate) landmarks: BTreeMap<LandmarkKey, Landmark>,
    pub(crate) prior: Option<MarginalizationPrior>,
    /// Last known world position of landmarks removed from the window.
    retired: BTreeMap<LandmarkKey, Vector3<f64>>,
    next_id: NodeId,
    pub stats: WindowStats,
}

const MAX_RETIRED: usize = 20_000;

impl Window {
    pub fn new(config: BackendConfig, noise: ImuNoiseParams, cameras: Vec<CameraModel>) -> Result<Self> {
        config.validate()?;
        noise.validate()?;
        let mut map = BTreeMap::new();
        for mut c in cameras {
            c.extrinsics.estimate_time_offset = config.estimate_td;
            c.extrinsics.estimate_extrinsics = config.estimate_extrinsics;
            map.insert(c.extrinsics.camera_id, c);
        }
        Ok(Self {
            gravity: gravity_vector(noise.gravity_magnitude),
            config,
            noise,
            cameras: map,
            nodes: Vec::new(),
            edges: Vec::new(),
            landmarks: BTreeMap::new(),
            prior: None,
            retired: BTreeMap::new(),
            next_id: 0,
            stats: WindowStats::default(),
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[ImuEdge] {
        &self.edges
    }

    pub fn landmarks(&self) -> &BTreeMap<LandmarkKey, Landmark> {
        &self.landmarks
    }

    pub fn landmarks_mut(&mut self) -> &mut BTreeMap<LandmarkKey, Landmark> {
        &mut self.landmarks
    }

    pub fn prior(&self) -> Option<&MarginalizationPrior> {
        self.prior.as_ref()
    }

    pub fn set_prior(&mut self, prior: Option<MarginalizationPrior>) {
        self.prior = prior;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn newest(&self) -> Option<&Node> {
        self.nodes.last()
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.node_index(id).map(move |i| &mut self.nodes[i])
    }

    pub fn camera(&self, id: u32) -> Result<&CameraModel> {
        self.cameras.get(&id).ok_or(Error::UnknownCamera(id))
    }

    pub fn time_offset(&self, camera: u32) -> f64 {
        self.cameras.get(&camera).map_or(0.0, |c| c.extrinsics.time_offset)
    }

    /// Optimization variables other than landmarks, in solver order.
    pub fn variables(&self) -> Vec<VarKey> {
        let mut keys: Vec<VarKey> = self.nodes.iter().map(|n| VarKey::Node(n.id)).collect();
        for (&id, c) in &self.cameras {
            if c.extrinsics.estimate_extrinsics {
                keys.push(VarKey::Extrinsics(id));
            }
            if c.extrinsics.estimate_time_offset {
                keys.push(VarKey::TimeOffset(id));
            }
        }
        keys
    }

    pub fn value(&self, key: &VarKey) -> VarValue {
        match key {
            VarKey::Node(id) => VarValue::Node(self.node(*id).expect("node in window").state),
            VarKey::Extrinsics(c) => VarValue::Extrinsics(self.cameras[c].extrinsics.body_from_camera),
            VarKey::TimeOffset(c) => VarValue::TimeOffset(self.cameras[c].extrinsics.time_offset),
        }
    }

    pub fn set_value(&mut self, key: &VarKey, value: VarValue) {
        match (key, value) {
            (VarKey::Node(id), VarValue::Node(s)) => self.node_mut(*id).expect("node in window").state = s,
            (VarKey::Extrinsics(c), VarValue::Extrinsics(p)) => {
                self.cameras.get_mut(c).expect("camera").extrinsics.body_from_camera = p
            }
            (VarKey::TimeOffset(c), VarValue::TimeOffset(t)) => {
                self.cameras.get_mut(c).expect("camera").extrinsics.time_offset = t
            }
            _ => panic!("variable kind mismatch"),
        }
    }

    fn check_invariants(&self) {
        debug_assert!(self.nodes.windows(2).all(|w| w[0].state.timestamp < w[1].state.timestamp));
        debug_assert!(self.nodes.windows(2).all(|w| w[0].id < w[1].id));
        debug_assert_eq!(self.edges.len(), self.nodes.len().saturating_sub(1));
        debug_assert!(self.nodes.len() <= self.config.window_size);
    }

    /// Starts the window with an externally initialized state and a prior
    /// with the given standard deviations (error-state order).
    pub fn insert_first(
        &mut self,
        frame: &FrameMeasurement,
        mut state: ImuState,
        sigmas: &[f64; STATE_DIM],
    ) -> Result<InsertReport> {
        let td = self.camera(frame.camera_id)?.extrinsics.time_offset;
        state.timestamp = frame.timestamp + td;
        let id = self.push_node(frame, state, true);
        let key = VarKey::Node(id);
        let jac = DMatrix::from_diagonal(&DVector::from_iterator(STATE_DIM, sigmas.iter().map(|s| 1.0 / s)));
        self.prior = Some(MarginalizationPrior {
            keys: vec![key],
            linearization: vec![VarValue::Node(state)],
            jacobian: jac,
            residual: DVector::zeros(STATE_DIM),
            clipped: 0,
        });
        let (new_landmarks, tracked_landmarks) = self.associate(frame, id);
        self.check_invariants();
        Ok(InsertReport {
            node: id,
            keyframe: true,
            decision: None,
            new_landmarks,
            tracked_landmarks,
        })
    }

    fn push_node(&mut self, frame: &FrameMeasurement, state: ImuState, keyframe: bool) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        let mut features: Vec<(u64, Vector2<f64>)> = frame.observations.iter().map(|o| (o.id, o.uv)).collect();
        features.sort_by_key(|f| f.0);
        self.nodes.push(Node {
            id,
            camera_id: frame.camera_id,
            t_cam: frame.timestamp,
            keyframe,
            state,
            features,
        });
        id
    }

    /// Adds a node for `frame`, running the marginalization policy first when
    /// the window is full. `imu` must cover the newest node time up to the
    /// frame's IMU-clock time.
    pub fn insert_frame(&mut self, frame: &FrameMeasurement, imu: &[ImuSample]) -> Result<InsertReport> {
        let td = self.camera(frame.camera_id)?.extrinsics.time_offset;
        let newest = self.nodes.last().ok_or(Error::NotInitialized)?;
        let t_node = frame.timestamp + td;
        if t_node <= newest.state.timestamp {
            self.stats.out_of_order += 1;
            return Err(Error::OutOfOrderFrame {
                frame_time: t_node,
                newest_time: newest.state.timestamp,
            });
        }
        let at_capacity = self.nodes.len() >= self.config.window_size;
        // At capacity the newest node may be dropped, so the IMU span has to
        // start one node earlier.
        let lower = if at_capacity && self.nodes.len() >= 2 {
            self.nodes[self.nodes.len() - 2].state.timestamp
        } else {
            newest.state.timestamp
        };
        let covered = imu.first().is_some_and(|s| s.timestamp <= lower) && imu.last().is_some_and(|s| s.timestamp >= t_node);
        if !covered {
            return Err(Error::ImuGap {
                from: lower,
                to: t_node,
            });
        }

        let decision = if at_capacity {
            Some(self.apply_marginalization_policy(frame.camera_id)?)
        } else {
            None
        };

        let prev = self.nodes.last().expect("window keeps at least one node");
        let samples = samples_between(imu, prev.state.timestamp, t_node)?;
        let edge = ImuEdge::new(samples, &prev.state.bias_accel, &prev.state.bias_gyro, &self.noise)?;
        let state = predict_state(&edge.delta, &prev.state, &self.gravity);

        let predecessor = self.nodes.iter().rev().find(|n| n.camera_id == frame.camera_id);
        let mut features: Vec<(u64, Vector2<f64>)> = frame.observations.iter().map(|o| (o.id, o.uv)).collect();
        features.sort_by_key(|f| f.0);
        let keyframe = classify_keyframe(
            predecessor.map(|n| n.features.as_slice()),
            &features,
            self.config.parallax_threshold,
            self.config.track_threshold,
        );
        let id = self.push_node(frame, state, keyframe);
        self.edges.push(edge);
        let (new_landmarks, tracked_landmarks) = self.associate(frame, id);
        self.check_invariants();
        Ok(InsertReport {
            node: id,
            keyframe,
            decision,
            new_landmarks,
            tracked_landmarks,
        })
    }

    /// Makes room for a frame of `camera`: if that camera's newest node is a
    /// keyframe (or it has none) the oldest node is marginalized, otherwise
    /// that node is dropped and its IMU span merged into its neighbours.
    pub fn apply_marginalization_policy(&mut self, camera: u32) -> Result<PolicyDecision> {
        let last = self.nodes.iter().rposition(|n| n.camera_id == camera);
        let decision = match last {
            Some(i) if !self.nodes[i].keyframe && i > 0 => {
                let id = self.nodes[i].id;
                self.drop_node(i)?;
                PolicyDecision::DropLast(id)
            }
            _ => {
                let id = self.nodes[0].id;
                self.marginalize_oldest();
                PolicyDecision::MarginalizeOldest(id)
            }
        };
        self.stats.decisions.push(decision);
        self.check_invariants();
        Ok(decision)
    }

    /// Removes node `index` (not the oldest), discarding its observations
    /// and re-integrating the IMU samples across it.
    pub(crate) fn drop_node(&mut self, index: usize) -> Result<()> {
        assert!(index > 0, "the oldest node is marginalized, not dropped");
        let id = self.nodes[index].id;
        if let Some(prior) = &self.prior {
            if prior.contains(&VarKey::Node(id)) {
                let p = prior.eliminate(&VarKey::Node(id));
                self.stats.clipped_eigenvalues += p.as_ref().map_or(0, |p| p.clipped);
                self.prior = p;
            }
        }
        self.remove_observations_of(id);

        if index + 1 == self.nodes.len() {
            self.edges.pop();
        } else {
            let mut samples = self.edges[index - 1].samples.clone();
            samples.extend_from_slice(&self.edges[index].samples[1..]);
            let from = &self.nodes[index - 1].state;
            let merged = ImuEdge::new(samples, &from.bias_accel, &from.bias_gyro, &self.noise)?;
            self.edges[index - 1] = merged;
            self.edges.remove(index);
        }
        self.nodes.remove(index);
        Ok(())
    }

    /// Strips every observation made at node `id`, re-anchoring or retiring
    /// the landmarks that were anchored there.
    fn remove_observations_of(&mut self, id: NodeId) {
        let mut retire = Vec::new();
        let keys: Vec<LandmarkKey> = self.landmarks.keys().copied().collect();
        for key in keys {
            let lm = &self.landmarks[&key];
            let Some(pos) = lm.observations.iter().position(|o| o.node == id) else { continue };
            if pos > 0 {
                self.landmarks.get_mut(&key).unwrap().observations.remove(pos);
                continue;
            }
            let world = self.world_point(lm);
            let lm = self.landmarks.get_mut(&key).unwrap();
            lm.observations.remove(0);
            if lm.observations.is_empty() {
                retire.push((key, world));
                continue;
            }
            let anchor = lm.observations[0];
            let cam_id = lm.camera_id;
            let node = self.node(anchor.node).expect("observation of a window node");
            let cam = &self.cameras[&cam_id];
            let p_c = node
                .state
                .pose()
                .compose(&cam.extrinsics.body_from_camera)
                .inverse_transform_point(&world);
            let (lo, hi) = (self.config.min_inv_depth, self.config.max_inv_depth);
            let lm = self.landmarks.get_mut(&key).unwrap();
            if p_c.z > MIN_DEPTH {
                lm.inv_depth = (1.0 / p_c.z).clamp(lo, hi);
            } else {
                retire.push((key, world));
            }
        }
        for (key, world) in retire {
            self.landmarks.remove(&key);
            self.retire(key, world);
        }
    }

    fn retire(&mut self, key: LandmarkKey, world: Vector3<f64>) {
        if self.retired.len() >= MAX_RETIRED {
            self.retired.clear();
        }
        self.retired.insert(key, world);
    }

    /// Marginalizes the oldest node together with every landmark it observes
    /// into the prior, then removes them from the window.
    pub fn marginalize_oldest(&mut self) {
        let oldest = self.nodes[0].id;
        let keys: Vec<LandmarkKey> = self
            .landmarks
            .iter()
            .filter(|(_, l)| l.observations.iter().any(|o| o.node == oldest))
            .map(|(k, _)| *k)
            .collect();
        let prior = crate::backend::solver::marginalize(self, oldest, &keys);
        if let Some(p) = &prior {
            self.stats.clipped_eigenvalues += p.clipped;
        }
        self.prior = prior;
        for key in keys {
            let lm = self.landmarks.remove(&key).expect("selected landmark");
            let world = self.world_point(&lm);
            self.retire(key, world);
        }
        self.nodes.remove(0);
        if !self.edges.is_empty() {
            self.edges.remove(0);
        }
    }

    pub fn world_point(&self, lm: &Landmark) -> Vector3<f64> {
        let a = lm.anchor();
        let node = self.node(a.node).expect("anchor in window");
        let cam = &self.cameras[&lm.camera_id];
        landmark_world_point(
            &node.state.pose(),
            &a.point,
            lm.inv_depth,
            &cam.extrinsics.body_from_camera,
            cam.extrinsics.time_offset,
        )
    }

    /// Attaches the frame's observations to landmarks, creating new ones
    /// anchored at node `id`. Returns (new, continued) counts.
    fn associate(&mut self, frame: &FrameMeasurement, id: NodeId) -> (usize, usize) {
        let node = self.node(id).expect("node just inserted");
        let t_node = node.state.timestamp;
        let body = node.state.pose();
        let cam = self.cameras[&frame.camera_id];
        let camera_pose = body.compose(&cam.extrinsics.body_from_camera);
        let (lo, hi) = (self.config.min_inv_depth, self.config.max_inv_depth);
        let mut fresh = 0;
        let mut continued = 0;
        let mut to_triangulate = Vec::new();
        for o in &frame.observations {
            let key = (frame.camera_id, o.id);
            let obs = LandmarkObservation {
                node: id,
                point: ObservationPoint {
                    uv: o.uv,
                    velocity: o.velocity,
                    t_cam: frame.timestamp,
                    t_node,
                },
                depth: o.depth.filter(|d| *d > 0.0),
            };
            if let Some(lm) = self.landmarks.get_mut(&key) {
                lm.observations.push(obs);
                continued += 1;
                if !lm.triangulated {
                    to_triangulate.push(key);
                }
                continue;
            }
            let (inv_depth, known) = match obs.depth {
                Some(d) => (1.0 / d, true),
                None => match self.retired.get(&key) {
                    Some(p) => {
                        let z = camera_pose.inverse_transform_point(p).z;
                        if z > 0.05 {
                            (1.0 / z, false)
                        } else {
                            (1.0 / self.config.default_depth, false)
                        }
                    }
                    None => (1.0 / self.config.default_depth, false),
                },
            };
            self.landmarks.insert(
                key,
                Landmark {
                    camera_id: frame.camera_id,
                    feature_id: o.id,
                    inv_depth: inv_depth.clamp(lo, hi),
                    observations: vec![obs],
                    triangulated: known,
                },
            );
            fresh += 1;
        }
        for key in to_triangulate {
            self.triangulate(&key);
        }
        (fresh, continued)
    }

    /// Two-view midpoint triangulation against the observation with the
    /// widest ray angle to the anchor, accepted when that angle is large
    /// enough and the point lies in front of the anchor.
    fn triangulate(&mut self, key: &LandmarkKey) {
        let lm = &self.landmarks[key];
        let cam = &self.cameras[&lm.camera_id];
        let td = cam.extrinsics.time_offset;
        let ray_world = |o: &LandmarkObservation| {
            let n = self.node(o.node).expect("observation node");
            let pose = n.state.pose().compose(&cam.extrinsics.body_from_camera);
            (pose.translation, pose.rotation.rotate(&o.point.ray(td)).normalize())
        };
        let (ca, da) = ray_world(lm.anchor());
        let mut best: Option<(f64, Vector3<f64>, Vector3<f64>)> = None;
        for o in &lm.observations[1..] {
            let (c, d) = ray_world(o);
            let sin = da.cross(&d).norm();
            if best.is_none_or(|b| sin > b.0) {
                best = Some((sin, c, d));
            }
        }
        let Some((sin, cb, db)) = best else { return };
        if sin < self.config.triangulation_parallax {
            return;
        }
        // Closest points on the two rays.
        let w = ca - cb;
        let (a, b, c) = (da.dot(&da), da.dot(&db), db.dot(&db));
        let (d, e) = (da.dot(&w), db.dot(&w));
        let den = a * c - b * b;
        if den.abs() < 1e-12 {
            return;
        }
        let s = (b * e - c * d) / den;
        let t = (a * e - b * d) / den;
        if s <= 0.0 || t <= 0.0 {
            return;
        }
        let point = 0.5 * ((ca + da * s) + (cb + db * t));
        let anchor_node = self.node(lm.anchor().node).expect("anchor node");
        let z = anchor_node
            .state
            .pose()
            .compose(&cam.extrinsics.body_from_camera)
            .inverse_transform_point(&point)
            .z;
        if z > 0.05 {
            let (lo, hi) = (self.config.min_inv_depth, self.config.max_inv_depth);
            let lm = self.landmarks.get_mut(key).unwrap();
            lm.inv_depth = (1.0 / z).clamp(lo, hi);
            lm.triangulated = true;
        }
    }

    /// Re-integrates every edge whose start-node bias moved past the
    /// first-order correction thresholds.
    pub fn reintegrate_stale_edges(&mut self) -> Result<()> {
        for k in 0..self.edges.len() {
            let s = &self.nodes[k].state;
            let e = &self.edges[k];
            let dba = (s.bias_accel - e.delta.bias_accel).norm();
            let dbg = (s.bias_gyro - e.delta.bias_gyro).norm();
            if dba > REINTEGRATE_ACCEL_BIAS || dbg > REINTEGRATE_GYRO_BIAS {
                let samples = std::mem::take(&mut self.edges[k].samples);
                self.edges[k] = ImuEdge::new(samples, &s.bias_accel, &s.bias_gyro, &self.noise)?;
                self.stats.reintegrations += 1;
            }
        }
        Ok(())
    }
}
