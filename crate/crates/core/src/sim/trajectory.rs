//! Smooth ground-truth trajectories.
//!
//! Every trajectory is a function of a warped time `s(t)`: zero during the
//! initial rest period, then accelerating to unit rate over a quintic ramp.
//! Position and the ZYX Euler angles are C² in `s`, so the whole motion is C²
//! in `t` and IMU readings can be synthesized analytically.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::backend::state::ImuState;
use crate::error::{Error, Result};
use crate::manifold::Rotation;

/// Shape of the path, parameterized by warped time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathSpec {
    /// Horizontal circle around `center` at constant speed.
    Circle {
        center: [f64; 3],
        radius: f64,
        speed: f64,
        /// Heading follows the direction of travel.
        #[serde(default = "yes")]
        face_tangent: bool,
    },
    Lissajous {
        center: [f64; 3],
        amplitude: [f64; 3],
        /// [Hz]
        frequency: [f64; 3],
        /// [rad]
        #[serde(default)]
        phase: [f64; 3],
    },
    /// Clamped cubic spline through `(x, y, z, yaw_deg)` waypoints reached at
    /// the given warped times; the path holds the last waypoint afterwards.
    Spline { waypoints: Vec<[f64; 4]>, times: Vec<f64> },
    HoverYaw {
        position: [f64; 3],
        /// [deg/s]
        yaw_rate_deg: f64,
    },
}

fn yes() -> bool {
    true
}

/// Sinusoidal attitude and height oscillation added on top of the path,
/// as `[amplitude, frequency_hz]` pairs (angles in degrees).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Excitation {
    pub roll_deg: [f64; 2],
    pub pitch_deg: [f64; 2],
    pub yaw_deg: [f64; 2],
    pub height: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Initial period without motion [s].
    #[serde(default = "default_rest")]
    pub rest: f64,
    /// Duration of the speed-up from rest [s].
    #[serde(default = "default_ramp")]
    pub ramp: f64,
    /// Heading at `s = 0` for paths without their own heading [deg].
    #[serde(default)]
    pub initial_yaw_deg: f64,
    pub path: PathSpec,
    #[serde(default)]
    pub excitation: Excitation,
}

fn default_rest() -> f64 {
    1.0
}

fn default_ramp() -> f64 {
    2.0
}

/// Ground truth at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// World-frame acceleration [m/s²].
    pub acceleration: Vector3<f64>,
    pub orientation: Rotation,
    /// Body-frame angular velocity [rad/s].
    pub angular_velocity: Vector3<f64>,
}

impl TrajectoryPoint {
    pub fn state(&self, t: f64, bias_accel: Vector3<f64>, bias_gyro: Vector3<f64>) -> ImuState {
        ImuState {
            timestamp: t,
            position: self.position,
            velocity: self.velocity,
            orientation: self.orientation,
            bias_accel,
            bias_gyro,
        }
    }
}

/// Value with first and second derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Jet {
    f: f64,
    d1: f64,
    d2: f64,
}

impl Jet {
    fn constant(f: f64) -> Self {
        Jet { f, d1: 0.0, d2: 0.0 }
    }

    fn sine(amplitude: f64, hz: f64, phase: f64, s: f64) -> Self {
        let w = TAU * hz;
        let a = w * s + phase;
        Jet {
            f: amplitude * a.sin(),
            d1: amplitude * w * a.cos(),
            d2: -amplitude * w * w * a.sin(),
        }
    }

    fn add(self, o: Jet) -> Jet {
        Jet {
            f: self.f + o.f,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
        }
    }

    /// Chain rule through the time warp.
    fn warp(self, w: &Jet) -> Jet {
        Jet {
            f: self.f,
            d1: self.d1 * w.d1,
            d2: self.d2 * w.d1 * w.d1 + self.d1 * w.d2,
        }
    }
}

/// Cubic spline with zero end slopes, stored as knot values and second
/// derivatives.
#[derive(Clone, Debug)]
struct ClampedSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl ClampedSpline {
    fn new(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        // Tridiagonal system for the second derivatives with f'(t0) = f'(tn) = 0.
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        b[0] = 2.0 * h[0];
        c[0] = h[0];
        d[0] = 6.0 * (y[1] - y[0]) / h[0];
        for i in 1..n - 1 {
            a[i] = h[i - 1];
            b[i] = 2.0 * (h[i - 1] + h[i]);
            c[i] = h[i];
            d[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        a[n - 1] = h[n - 2];
        b[n - 1] = 2.0 * h[n - 2];
        d[n - 1] = -6.0 * (y[n - 1] - y[n - 2]) / h[n - 2];
        for i in 1..n {
            let w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            d[i] -= w * d[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 1] = d[n - 1] / b[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (d[i] - c[i] * m[i + 1]) / b[i];
        }
        Self {
            t: t.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn eval(&self, s: f64) -> Jet {
        let n = self.t.len();
        if s <= self.t[0] {
            return Jet::constant(self.y[0]);
        }
        if s >= self.t[n - 1] {
            return Jet::constant(self.y[n - 1]);
        }
        let i = self.t.partition_point(|&k| k <= s) - 1;
        let h = self.t[i + 1] - self.t[i];
        let (a, b) = ((self.t[i + 1] - s) / h, (s - self.t[i]) / h);
        let (mi, mj) = (self.m[i], self.m[i + 1]);
        let (yi, yj) = (self.y[i], self.y[i + 1]);
        Jet {
            f: a * yi + b * yj + ((a * a * a - a) * mi + (b * b * b - b) * mj) * h * h / 6.0,
            d1: (yj - yi) / h + (-(3.0 * a * a - 1.0) * mi + (3.0 * b * b - 1.0) * mj) * h / 6.0,
            d2: a * mi + b * mj,
        }
    }
}

#[derive(Clone, Debug)]
enum Path {
    Circle {
        center: Vector3<f64>,
        radius: f64,
        omega: f64,
        face_tangent: bool,
    },
    Lissajous {
        center: Vector3<f64>,
        amplitude: [f64; 3],
        frequency: [f64; 3],
        phase: [f64; 3],
    },
    Spline([ClampedSpline; 4]),
    HoverYaw { position: Vector3<f64>, yaw_rate: f64 },
}

/// Queryable ground-truth trajectory.
#[derive(Clone, Debug)]
pub struct Trajectory {
    rest: f64,
    ramp: f64,
    initial_yaw: f64,
    path: Path,
    excitation: Excitation,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trajectory: {m}")));
        if !(self.rest >= 0.0) || !(self.ramp > 0.0) {
            return bad("rest must be non-negative and ramp positive");
        }
        match &self.path {
            PathSpec::Circle { radius, speed, .. } => {
                if !(*radius > 0.0) || !speed.is_finite() {
                    return bad("circle needs a positive radius and finite speed");
                }
            }
            PathSpec::Lissajous { frequency, .. } => {
                if frequency.iter().any(|f| !f.is_finite()) {
                    return bad("lissajous frequencies must be finite");
                }
            }
            PathSpec::Spline { waypoints, times } => {
                if waypoints.len() < 2 || waypoints.len() != times.len() {
                    return bad("spline needs at least two waypoints and one time per waypoint");
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("spline times must be strictly increasing");
                }
            }
            PathSpec::HoverYaw { yaw_rate_deg, .. } => {
                if !yaw_rate_deg.is_finite() {
                    return bad("yaw rate must be finite");
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Trajectory> {
        self.validate()?;
        let path = match &self.path {
            PathSpec::Circle {
                center,
                radius,
                speed,
                face_tangent,
            } => Path::Circle {
                center: Vector3::from(*center),
                radius: *radius,
                omega: speed / radius,
                face_tangent: *face_tangent,
            },
            PathSpec::Lissajous {
                center,
                amplitude,
                frequency,
                phase,
            } => Path::Lissajous {
                center: Vector3::from(*center),
                amplitude: *amplitude,
                frequency: *frequency,
                phase: *phase,
            },
            PathSpec::Spline { waypoints, times } => {
                let comp = |k: usize| {
                    let y: Vec<f64> = waypoints
                        .iter()
                        .map(|w| if k == 3 { w[3].to_radians() } else { w[k] })
                        .collect();
                    ClampedSpline::new(times, &y)
                };
                Path::Spline([comp(0), comp(1), comp(2), comp(3)])
            }
            PathSpec::HoverYaw { position, yaw_rate_deg } => Path::HoverYaw {
                position: Vector3::from(*position),
                yaw_rate: yaw_rate_deg.to_radians(),
            },
        };
        Ok(Trajectory {
            rest: self.rest,
            ramp: self.ramp,
            initial_yaw: self.initial_yaw_deg.to_radians(),
            path,
            excitation: self.excitation,
        })
    }
}

impl Trajectory {
    /// Warped time and its derivatives.
    fn warp(&self, t: f64) -> Jet {
        let u = (t - self.rest) / self.ramp;
        if u <= 0.0 {
            Jet::default()
        } else if u >= 1.0 {
            Jet {
                f: 0.5 * self.ramp + (t - self.rest - self.ramp),
                d1: 1.0,
                d2: 0.0,
            }
        } else {
            let u2 = u * u;
            Jet {
                f: self.ramp * u2 * u2 * (u2 - 3.0 * u + 2.5),
                d1: u2 * u * (6.0 * u2 - 15.0 * u + 10.0),
                d2: 30.0 * u2 * (1.0 - u) * (1.0 - u) / self.ramp,
            }
        }
    }

    /// Position and (yaw, pitch, roll) as functions of warped time.
    fn components(&self, s: f64) -> ([Jet; 3], [Jet; 3]) {
        let ex = &self.excitation;
        let (pos, yaw) = match &self.path {
            Path::Circle {
                center,
                radius,
                omega,
                face_tangent,
            } => {
                let a = omega * s;
                let (sn, cs) = a.sin_cos();
                let pos = [
                    Jet {
                        f: center.x + radius * cs,
                        d1: -radius * omega * sn,
                        d2: -radius * omega * omega * cs,
                    },
                    Jet {
                        f: center.y + radius * sn,
                        d1: radius * omega * cs,
                        d2: -radius * omega * omega * sn,
                    },
                    Jet::constant(center.z),
                ];
                let yaw = if *face_tangent {
                    let dir = if *omega >= 0.0 { 0.5 } else { -0.5 } * std::f64::consts::PI;
                    Jet {
                        f: a + dir,
                        d1: *omega,
                        d2: 0.0,
                    }
                } else {
                    Jet::constant(self.initial_yaw)
                };
                (pos, yaw)
            }
            Path::Lissajous {
                center,
                amplitude,
                frequency,
                phase,
            } => {
                let c = |k: usize| Jet::constant(center[k]).add(Jet::sine(amplitude[k], frequency[k], phase[k], s));
                ([c(0), c(1), c(2)], Jet::constant(self.initial_yaw))
            }
            Path::Spline(sp) => ([sp[0].eval(s), sp[1].eval(s), sp[2].eval(s)], sp[3].eval(s)),
            Path::HoverYaw { position, yaw_rate } => (
                [
                    Jet::constant(position.x),
                    Jet::constant(position.y),
                    Jet::constant(position.z),
                ],
                Jet {
                    f: self.initial_yaw + yaw_rate * s,
                    d1: *yaw_rate,
                    d2: 0.0,
                },
            ),
        };
        let osc = |p: [f64; 2], scale: f64| Jet::sine(p[0] * scale, p[1], 0.0, s);
        let deg = 1f64.to_radians();
        let pos = [pos[0], pos[1], pos[2].add(osc(ex.height, 1.0))];
        let angles = [yaw.add(osc(ex.yaw_deg, deg)), osc(ex.pitch_deg, deg), osc(ex.roll_deg, deg)];
        (pos, angles)
    }

    pub fn at(&self, t: f64) -> TrajectoryPoint {
        let w = self.warp(t);
        let (pos, ang) = self.components(w.f);
        let pos = pos.map(|j| j.warp(&w));
        let [yaw, pitch, roll] = ang.map(|j| j.warp(&w));
        let (sr, cr) = roll.f.sin_cos();
        let (sp, cp) = pitch.f.sin_cos();
        // Body rates from ZYX Euler angle rates.
        let e = Matrix3::new(1.0, 0.0, -sp, 0.0, cr, sr * cp, 0.0, -sr, cr * cp);
        TrajectoryPoint {
            position: Vector3::new(pos[0].f, pos[1].f, pos[2].f),
            velocity: Vector3::new(pos[0].d1, pos[1].d1, pos[2].d1),
            acceleration: Vector3::new(pos[0].d2, pos[1].d2, pos[2].d2),
            orientation: Rotation::from_euler_zyx(yaw.f, pitch.f, roll.f),
            angular_velocity: e * Vector3::new(roll.d1, pitch.d1, yaw.d1),
        }
    }

    /// End of the initial rest period.
    pub fn rest_end(&self) -> f64 {
        self.rest
    }
}
