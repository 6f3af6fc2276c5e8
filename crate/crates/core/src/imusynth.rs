//! Synthetic IMU generation from motion, network input features, and
//! real-measurement recalibration.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{ProgipError, Result};
use crate::rotmath::{angular_velocity, rot_to_6d, RotMatrix};
use crate::skeleton::{forward_kinematics, FullPose, SkeletonModel};

pub const NUM_SENSORS: usize = 3;
pub const FEATURES_PER_SENSOR: usize = 15;
pub const INPUT_DIM: usize = NUM_SENSORS * FEATURES_PER_SENSOR;
pub const DEFAULT_ACC_SCALE: f64 = 30.0;
pub const GRAVITY: f64 = 9.81;

pub const SENSOR_JOINT_NAMES: [&str; NUM_SENSORS] = ["Head", "L_Wrist", "R_Wrist"];

/// One network input frame: per sensor `[acc(3), rot6d(6), angvel6d(6)]`.
pub type FeatureFrame = [f32; INPUT_DIM];

#[derive(Debug, Clone, PartialEq)]
pub struct SensorPlacement {
    pub sensor_joints: [usize; NUM_SENSORS],
}

impl SensorPlacement {
    /// Head, left wrist, right wrist.
    pub fn head_and_wrists(skel: &SkeletonModel) -> Result<Self> {
        let mut sensor_joints = [0; NUM_SENSORS];
        for (slot, name) in sensor_joints.iter_mut().zip(SENSOR_JOINT_NAMES) {
            *slot = skel
                .index_of(name)
                .ok_or_else(|| ProgipError::Config(format!("skeleton has no sensor joint {name}")))?;
        }
        Ok(SensorPlacement { sensor_joints })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    /// m/s², global frame, before scaling
    pub acc: Vector3<f64>,
    pub rot: RotMatrix,
}

impl Default for SensorReading {
    fn default() -> Self {
        SensorReading {
            acc: Vector3::zeros(),
            rot: RotMatrix::identity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuFrame {
    pub sensors: [SensorReading; NUM_SENSORS],
}

impl ImuFrame {
    pub fn is_finite(&self) -> bool {
        self.sensors
            .iter()
            .all(|s| s.acc.iter().chain(s.rot.0.iter()).all(|v| v.is_finite()))
    }
}

/// A block of `M` consecutive feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    pub frames: Vec<FeatureFrame>,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Half-width of the second-difference stencil, in frames.
    pub smoothing_span: usize,
    /// Add the specific-force gravity term (`+g` along +y).
    pub add_gravity: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            smoothing_span: 1,
            add_gravity: false,
        }
    }
}

/// Sensor orientations from FK and accelerations from the central second
/// difference of FK sensor positions. Boundary frames copy the nearest
/// interior value.
pub fn synthesize_imu(
    skel: &SkeletonModel,
    poses: &[FullPose],
    placement: &SensorPlacement,
    dt: f64,
    opts: &SynthOptions,
) -> Result<Vec<ImuFrame>> {
    let span = opts.smoothing_span.max(1);
    let needed = 2 * span + 1;
    if poses.len() < needed.max(3) {
        return Err(ProgipError::TooShort {
            needed: needed.max(3),
            got: poses.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(ProgipError::Config(format!("dt must be positive, got {dt}")));
    }
    let n = poses.len();
    let mut positions = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for pose in poses {
        let fk = forward_kinematics(skel, pose);
        let mut frame = ImuFrame::default();
        let mut pos = [Vector3::zeros(); NUM_SENSORS];
        for (s, &j) in placement.sensor_joints.iter().enumerate() {
            frame.sensors[s].rot = fk.global_rot[j];
            pos[s] = fk.positions[j];
        }
        positions.push(pos);
        frames.push(frame);
    }
    let h2 = (span as f64 * dt).powi(2);
    for t in span..n - span {
        for s in 0..NUM_SENSORS {
            frames[t].sensors[s].acc =
                (positions[t - span][s] + positions[t + span][s] - positions[t][s] * 2.0) / h2;
        }
    }
    for t in 0..span {
        for s in 0..NUM_SENSORS {
            frames[t].sensors[s].acc = frames[span].sensors[s].acc;
            frames[n - 1 - t].sensors[s].acc = frames[n - 1 - span].sensors[s].acc;
        }
    }
    if opts.add_gravity {
        for f in &mut frames {
            for s in &mut f.sensors {
                s.acc.y += GRAVITY;
            }
        }
    }
    Ok(frames)
}

/// Feature vector for one frame. `prev` is the preceding frame; the first
/// frame of a stream uses identity angular velocity.
pub fn feature_frame(prev: Option<&ImuFrame>, cur: &ImuFrame, acc_scale: f64) -> FeatureFrame {
    let mut out = [0f32; INPUT_DIM];
    for s in 0..NUM_SENSORS {
        let base = s * FEATURES_PER_SENSOR;
        let reading = &cur.sensors[s];
        for k in 0..3 {
            out[base + k] = (reading.acc[k] / acc_scale) as f32;
        }
        let r6 = rot_to_6d(&reading.rot);
        for k in 0..6 {
            out[base + 3 + k] = r6.0[k] as f32;
        }
        let w = match prev {
            Some(p) => angular_velocity(&p.sensors[s].rot, &reading.rot),
            None => RotMatrix::identity(),
        };
        let w6 = rot_to_6d(&w);
        for k in 0..6 {
            out[base + 9 + k] = w6.0[k] as f32;
        }
    }
    out
}

/// Converts a measurement stream into 45-dim feature frames.
pub fn build_input(frames: &[ImuFrame], acc_scale: f64) -> Vec<FeatureFrame> {
    frames
        .iter()
        .enumerate()
        .map(|(t, f)| feature_frame(if t == 0 { None } else { Some(&frames[t - 1]) }, f, acc_scale))
        .collect()
}

pub fn mean_acc(frames: &[ImuFrame]) -> [Vector3<f64>; NUM_SENSORS] {
    let mut mean = [Vector3::zeros(); NUM_SENSORS];
    if frames.is_empty() {
        return mean;
    }
    for f in frames {
        for s in 0..NUM_SENSORS {
            mean[s] += f.sensors[s].acc;
        }
    }
    for m in &mut mean {
        *m /= frames.len() as f64;
    }
    mean
}

/// Shifts each sensor's accelerations so their mean equals `target_mean`.
pub fn acc_bias_align(frames: &[ImuFrame], target_mean: &[Vector3<f64>; NUM_SENSORS]) -> Vec<ImuFrame> {
    let mean = mean_acc(frames);
    frames
        .iter()
        .map(|f| {
            let mut out = *f;
            for s in 0..NUM_SENSORS {
                out.sensors[s].acc = f.sensors[s].acc - mean[s] + target_mean[s];
            }
            out
        })
        .collect()
}

/// Maps raw sensor readings into the body-aligned global frame:
/// `rot' = G · rot · C_s`, `acc' = G · acc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub global: RotMatrix,
    pub sensor: [RotMatrix; NUM_SENSORS],
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            global: RotMatrix::identity(),
            sensor: [RotMatrix::identity(); NUM_SENSORS],
        }
    }
}

impl Calibration {
    pub fn is_valid(&self) -> bool {
        self.global.is_valid(1e-6) && self.sensor.iter().all(|r| r.is_valid(1e-6))
    }

    pub fn inverse(&self) -> Calibration {
        Calibration {
            global: self.global.transpose(),
            sensor: self.sensor.map(|c| c.transpose()),
        }
    }

    /// T-pose calibration from frames captured while the user holds the rest
    /// pose. `G` removes the head sensor's heading about +y; `C_s` makes every
    /// calibrated sensor read identity (the rest-pose bone orientation).
    pub fn from_tpose(frames: &[ImuFrame]) -> Result<Calibration> {
        if frames.is_empty() {
            return Err(ProgipError::TooShort { needed: 1, got: 0 });
        }
        let mean_rot: Vec<RotMatrix> = (0..NUM_SENSORS)
            .map(|s| {
                let rots: Vec<RotMatrix> = frames.iter().map(|f| f.sensors[s].rot).collect();
                RotMatrix::chordal_mean(&rots)
            })
            .collect();
        let head = &mean_rot[0].0;
        let yaw = head[(0, 2)].atan2(head[(2, 2)]);
        let global = RotMatrix::about_y(-yaw);
        let sensor = std::array::from_fn(|s| global.mul(&mean_rot[s]).transpose());
        Ok(Calibration { global, sensor })
    }
}

pub fn align_global_frame(frames: &[ImuFrame], calib: &Calibration) -> Vec<ImuFrame> {
    frames
        .iter()
        .map(|f| {
            let mut out = *f;
            for s in 0..NUM_SENSORS {
                out.sensors[s].rot = calib.global.mul(&f.sensors[s].rot).mul(&calib.sensor[s]);
                out.sensors[s].acc = calib.global.apply(&f.sensors[s].acc);
            }
            out
        })
        .collect()
}
