//! Visual and depth residuals for inverse-depth landmarks.
//!
//! A landmark is stored as an inverse depth `λ` along the (time-offset
//! corrected) ray of its anchor observation. Pose Jacobian blocks are laid out
//! as `(δp, δθ)` to match the first six entries of the node error state.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};

use crate::manifold::{skew, Pose};

/// Points closer than this to the camera plane are rejected.
pub const MIN_DEPTH: f64 = 1e-6;

pub type Matrix2x6 = SMatrix<f64, 2, 6>;
pub type RowVector6 = SMatrix<f64, 1, 6>;

/// One observation of a landmark as seen by the back end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationPoint {
    pub uv: Vector2<f64>,
    pub velocity: Vector2<f64>,
    /// Camera timestamp of the frame.
    pub t_cam: f64,
    /// IMU-clock time of the node holding the observation.
    pub t_node: f64,
}

impl ObservationPoint {
    /// Image point moved to the node time given time offset `td`.
    pub fn corrected(&self, td: f64) -> Vector2<f64> {
        self.uv - self.velocity * (td + self.t_cam - self.t_node)
    }

    pub fn ray(&self, td: f64) -> Vector3<f64> {
        let c = self.corrected(td);
        Vector3::new(c.x, c.y, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualJacobians {
    pub pose_anchor: Matrix2x6,
    pub pose_target: Matrix2x6,
    pub inv_depth: Vector2<f64>,
    pub extrinsics: Matrix2x6,
    pub time_offset: Vector2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthJacobians {
    pub pose_anchor: RowVector6,
    pub pose_target: RowVector6,
    pub inv_depth: f64,
    pub extrinsics: RowVector6,
    pub time_offset: f64,
}

/// Intermediate quantities shared by the visual and depth residuals.
struct Transfer {
    p_ci: Vector3<f64>,
    p_bi: Vector3<f64>,
    p_bj: Vector3<f64>,
    p_cj: Vector3<f64>,
    /// d p_cj / d p_ci
    r_ji: Matrix3<f64>,
    r_cb_wj: Matrix3<f64>,
    ray_i: Vector3<f64>,
}

fn transfer(
    anchor: &Pose,
    anchor_obs: &ObservationPoint,
    target: &Pose,
    inv_depth: f64,
    body_from_camera: &Pose,
    td: f64,
) -> Transfer {
    let r_bc = body_from_camera.rotation.matrix();
    let ri = anchor.rotation.matrix();
    let rj = target.rotation.matrix();
    let ray_i = anchor_obs.ray(td);
    let p_ci = ray_i / inv_depth;
    let p_bi = r_bc * p_ci + body_from_camera.translation;
    let p_w = ri * p_bi + anchor.translation;
    let p_bj = rj.transpose() * (p_w - target.translation);
    let p_cj = r_bc.transpose() * (p_bj - body_from_camera.translation);
    let r_cb_wj = r_bc.transpose() * rj.transpose();
    Transfer {
        p_ci,
        p_bi,
        p_bj,
        p_cj,
        r_ji: r_cb_wj * ri * r_bc,
        r_cb_wj,
        ray_i,
    }
}

type PointJacobians = (SMatrix<f64, 3, 6>, SMatrix<f64, 3, 6>, Vector3<f64>, SMatrix<f64, 3, 6>, Vector3<f64>);

/// Jacobians of `p_cj` w.r.t. (anchor pose, target pose, λ, extrinsics, td).
fn point_jacobians(
    t: &Transfer,
    anchor: &Pose,
    anchor_obs: &ObservationPoint,
    inv_depth: f64,
    body_from_camera: &Pose,
) -> PointJacobians {
    let ri = anchor.rotation.matrix();
    let r_bc = body_from_camera.rotation.matrix();
    let mut ja = SMatrix::<f64, 3, 6>::zeros();
    ja.fixed_columns_mut::<3>(0).copy_from(&t.r_cb_wj);
    ja.fixed_columns_mut::<3>(3).copy_from(&(-t.r_cb_wj * ri * skew(&t.p_bi)));
    let mut jt = SMatrix::<f64, 3, 6>::zeros();
    jt.fixed_columns_mut::<3>(0).copy_from(&(-t.r_cb_wj));
    jt.fixed_columns_mut::<3>(3).copy_from(&(r_bc.transpose() * skew(&t.p_bj)));
    let jl = -t.r_ji * t.ray_i / (inv_depth * inv_depth);
    let mut je = SMatrix::<f64, 3, 6>::zeros();
    je.fixed_columns_mut::<3>(0).copy_from(&(t.r_cb_wj * ri - r_bc.transpose()));
    je.fixed_columns_mut::<3>(3).copy_from(&(-t.r_ji * skew(&t.p_ci) + skew(&t.p_cj)));
    let dray = Vector3::new(-anchor_obs.velocity.x, -anchor_obs.velocity.y, 0.0);
    let jtd = t.r_ji * dray / inv_depth;
    (ja, jt, jl, je, jtd)
}

/// Reprojection residual of a landmark anchored in one node and observed
/// from another, in normalized image coordinates. `None` when the point is
/// behind (or on) the observing camera.
pub fn visual_residual(
    anchor: &Pose,
    anchor_obs: &ObservationPoint,
    target: &Pose,
    target_obs: &ObservationPoint,
    inv_depth: f64,
    body_from_camera: &Pose,
    td: f64,
) -> Option<(Vector2<f64>, VisualJacobians)> {
    let t = transfer(anchor, anchor_obs, target, inv_depth, body_from_camera, td);
    let z = t.p_cj.z;
    if z <= MIN_DEPTH {
        return None;
    }
    let residual = t.p_cj.xy() / z - target_obs.corrected(td);
    let proj = Matrix2x3::new(1.0 / z, 0.0, -t.p_cj.x / (z * z), 0.0, 1.0 / z, -t.p_cj.y / (z * z));
    let (ja, jt, jl, je, jtd) = point_jacobians(&t, anchor, anchor_obs, inv_depth, body_from_camera);
    Some((
        residual,
        VisualJacobians {
            pose_anchor: proj * ja,
            pose_target: proj * jt,
            inv_depth: proj * jl,
            extrinsics: proj * je,
            time_offset: proj * jtd + target_obs.velocity,
        },
    ))
}

/// [`visual_residual`] without Jacobians.
pub fn visual_error(
    anchor: &Pose,
    anchor_obs: &ObservationPoint,
    target: &Pose,
    target_obs: &ObservationPoint,
    inv_depth: f64,
    body_from_camera: &Pose,
    td: f64,
) -> Option<Vector2<f64>> {
    let p = camera_point(anchor, anchor_obs, target, inv_depth, body_from_camera, td);
    (p.z > MIN_DEPTH).then(|| p.xy() / p.z - target_obs.corrected(td))
}

/// [`depth_residual`] without Jacobians.
pub fn depth_error(
    anchor: &Pose,
    anchor_obs: &ObservationPoint,
    target: &Pose,
    measured: f64,
    inv_depth: f64,
    body_from_camera: &Pose,
    td: f64,
) -> Option<f64> {
    let p = camera_point(anchor, anchor_obs, target, inv_depth, body_from_camera, td);
    (p.z > MIN_DEPTH).then(|| p.z - measured)
}

fn camera_point(
    anchor: &Pose,
    anchor_obs: &ObservationPoint,
    target: &Pose,
    inv_depth: f64,
    body_from_camera: &Pose,
    td: f64,
) -> Vector3<f64> {
    let world = landmark_world_point(anchor, anchor_obs, inv_depth, body_from_camera, td);
    body_from_camera.inverse_transform_point(&target.inverse_transform_point(&world))
}

/// Predicted minus measured depth of a landmark seen from a non-anchor node.
pub fn depth_residual(
    anchor: &Pose,
    anchor_obs: &ObservationPoint,
    target: &Pose,
    measured: f64,
    inv_depth: f64,
    body_from_camera: &Pose,
    td: f64,
) -> Option<(f64, DepthJacobians)> {
    let t = transfer(anchor, anchor_obs, target, inv_depth, body_from_camera, td);
    if t.p_cj.z <= MIN_DEPTH {
        return None;
    }
    let (ja, jt, jl, je, jtd) = point_jacobians(&t, anchor, anchor_obs, inv_depth, body_from_camera);
    let row = |m: &SMatrix<f64, 3, 6>| -> RowVector6 { m.fixed_rows::<1>(2).into_owned() };
    Some((
        t.p_cj.z - measured,
        DepthJacobians {
            pose_anchor: row(&ja),
            pose_target: row(&jt),
            inv_depth: jl.z,
            extrinsics: row(&je),
            time_offset: jtd.z,
        },
    ))
}

/// Depth residual at the anchor itself: `1/λ - d`, with its λ derivative.
pub fn anchor_depth_residual(inv_depth: f64, measured: f64) -> (f64, f64) {
    (1.0 / inv_depth - measured, -1.0 / (inv_depth * inv_depth))
}

/// Point in the world frame for a landmark anchored at `anchor`.
pub fn landmark_world_point(
    anchor: &Pose,
    anchor_obs: &ObservationPoint,
    inv_depth: f64,
    body_from_camera: &Pose,
    td: f64,
) -> Vector3<f64> {
    let p_c = anchor_obs.ray(td) / inv_depth;
    anchor.transform_point(&body_from_camera.transform_point(&p_c))
}

/// Huber weight for a squared whitened residual norm `s` with threshold
/// `delta`, together with the robust cost contribution.
pub fn huber(s: f64, delta: f64) -> (f64, f64) {
    let d2 = delta * delta;
    if s <= d2 {
        (1.0, s)
    } else {
        let n = s.sqrt();
        (delta / n, 2.0 * delta * n - d2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Rotation;

    fn obs(uv: Vector2<f64>) -> ObservationPoint {
        ObservationPoint {
            uv,
            velocity: Vector2::zeros(),
            t_cam: 0.0,
            t_node: 0.0,
        }
    }

    #[test]
    fn self_observation_vanishes() {
        let pose = Pose::new(Vector3::new(1.0, 2.0, 0.5), Rotation::from_euler_zyx(0.3, 0.1, -0.2));
        let ext = Pose::new(Vector3::new(0.1, 0.0, 0.05), Rotation::from_euler_zyx(-1.5, 0.0, -1.5));
        let o = obs(Vector2::new(0.1, -0.2));
        let (r, _) = visual_residual(&pose, &o, &pose, &o, 0.4, &ext, 0.0).unwrap();
        assert!(r.norm() < 1e-15);
    }

    #[test]
    fn exact_projection_and_depth() {
        let ext = Pose::new(Vector3::new(0.1, 0.0, 0.05), Rotation::from_euler_zyx(-1.5, 0.0, -1.5));
        let a = Pose::new(Vector3::new(0.0, 0.0, 1.0), Rotation::from_euler_zyx(0.2, 0.0, 0.0));
        let b = Pose::new(Vector3::new(0.3, -0.2, 1.1), Rotation::from_euler_zyx(0.4, 0.05, 0.02));
        let point = Vector3::new(4.0, 0.5, 1.5);
        let project = |p: &Pose| a_cam(p, &ext, &point);
        let (ca, cb) = (project(&a), project(&b));
        let oa = obs(ca.xy() / ca.z);
        let ob = obs(cb.xy() / cb.z);
        let (r, _) = visual_residual(&a, &oa, &b, &ob, 1.0 / ca.z, &ext, 0.0).unwrap();
        assert!(r.norm() < 1e-12);
        let (d, _) = depth_residual(&a, &oa, &b, cb.z, 1.0 / ca.z, &ext, 0.0).unwrap();
        assert!(d.abs() < 1e-12);
        let (d, _) = depth_residual(&a, &oa, &b, cb.z + 0.05, 1.0 / ca.z, &ext, 0.0).unwrap();
        assert!((d + 0.05).abs() < 1e-12);
    }

    fn a_cam(body: &Pose, ext: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
        body.compose(ext).inverse_transform_point(p)
    }

    #[test]
    fn behind_camera_is_rejected() {
        let a = Pose::identity();
        let b = Pose::new(Vector3::new(0.0, 0.0, 5.0), Rotation::identity());
        let o = obs(Vector2::zeros());
        assert!(visual_residual(&a, &o, &b, &o, 0.5, &Pose::identity(), 0.0).is_none());
    }

    #[test]
    fn huber_is_continuous() {
        let (w, c) = huber(1.0, 1.0);
        assert_eq!((w, c), (1.0, 1.0));
        let (w, c) = huber(4.0, 1.0);
        assert_eq!(w, 0.5);
        assert_eq!(c, 3.0);
    }
}
