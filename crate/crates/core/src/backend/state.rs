//! Estimated quantities: per-node IMU states and per-camera calibration.

use nalgebra::{SVector, Vector3};

use crate::manifold::{Pose, Rotation};

/// Tangent dimension of an [`ImuState`]: (δp, δθ, δv, δb_a, δb_g).
pub const STATE_DIM: usize = 15;
pub const P: usize = 0;
pub const R: usize = 3;
pub const V: usize = 6;
pub const BA: usize = 9;
pub const BG: usize = 12;

pub type StateTangent = SVector<f64, STATE_DIM>;

/// Body (IMU) state at one window node.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ImuState {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub orientation: Rotation,
    pub bias_accel: Vector3<f64>,
    pub bias_gyro: Vector3<f64>,
}

impl ImuState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.orientation)
    }

    pub fn plus(&self, d: &StateTangent) -> ImuState {
        ImuState {
            timestamp: self.timestamp,
            position: self.position + d.fixed_rows::<3>(P),
            orientation: self.orientation.plus(&d.fixed_rows::<3>(R).into_owned()),
            velocity: self.velocity + d.fixed_rows::<3>(V),
            bias_accel: self.bias_accel + d.fixed_rows::<3>(BA),
            bias_gyro: self.bias_gyro + d.fixed_rows::<3>(BG),
        }
    }

    /// Tangent `d` such that `other.plus(d) == self`.
    pub fn minus(&self, other: &ImuState) -> StateTangent {
        let mut d = StateTangent::zeros();
        d.fixed_rows_mut::<3>(P).copy_from(&(self.position - other.position));
        d.fixed_rows_mut::<3>(R).copy_from(&self.orientation.minus(&other.orientation));
        d.fixed_rows_mut::<3>(V).copy_from(&(self.velocity - other.velocity));
        d.fixed_rows_mut::<3>(BA).copy_from(&(self.bias_accel - other.bias_accel));
        d.fixed_rows_mut::<3>(BG).copy_from(&(self.bias_gyro - other.bias_gyro));
        d
    }
}

/// Body-from-camera extrinsics plus the camera-to-IMU clock offset.
///
/// A frame stamped `t` by the camera was captured at IMU time `t + time_offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraExtrinsics {
    pub camera_id: u32,
    pub body_from_camera: Pose,
    pub time_offset: f64,
    pub depth_capable: bool,
    pub estimate_extrinsics: bool,
    pub estimate_time_offset: bool,
}

impl CameraExtrinsics {
    pub const MAX_TIME_OFFSET: f64 = 0.1;

    pub fn new(camera_id: u32, body_from_camera: Pose) -> Self {
        Self {
            camera_id,
            body_from_camera,
            time_offset: 0.0,
            depth_capable: false,
            estimate_extrinsics: false,
            estimate_time_offset: false,
        }
    }
}

/// Stable identifier of a window node.
pub type NodeId = u64;

/// An optimization variable other than a landmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKey {
    Node(NodeId),
    Extrinsics(u32),
    TimeOffset(u32),
}

impl VarKey {
    pub fn dim(&self) -> usize {
        match self {
            VarKey::Node(_) => STATE_DIM,
            VarKey::Extrinsics(_) => 6,
            VarKey::TimeOffset(_) => 1,
        }
    }
}

/// Value of a [`VarKey`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VarValue {
    Node(ImuState),
    Extrinsics(Pose),
    TimeOffset(f64),
}

impl VarValue {
    pub fn dim(&self) -> usize {
        match self {
            VarValue::Node(_) => STATE_DIM,
            VarValue::Extrinsics(_) => 6,
            VarValue::TimeOffset(_) => 1,
        }
    }

    /// Writes `self ⊟ lin` into `out` and returns the rotation blocks that
    /// need a right-Jacobian-inverse correction, as (offset, log vector).
    pub fn minus_into(&self, lin: &VarValue, out: &mut [f64]) -> Option<(usize, Vector3<f64>)> {
        match (self, lin) {
            (VarValue::Node(a), VarValue::Node(b)) => {
                let d = a.minus(b);
                out.copy_from_slice(d.as_slice());
                Some((R, d.fixed_rows::<3>(R).into_owned()))
            }
            (VarValue::Extrinsics(a), VarValue::Extrinsics(b)) => {
                let d = a.minus(b);
                out[..3].copy_from_slice(d.translation.as_slice());
                out[3..].copy_from_slice(d.rotation.as_slice());
                Some((3, d.rotation))
            }
            (VarValue::TimeOffset(a), VarValue::TimeOffset(b)) => {
                out[0] = a - b;
                None
            }
            _ => panic!("variable kind mismatch"),
        }
    }
}
