use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ProgipError, Result};
use crate::imusynth::{ImuFrame, SensorReading, NUM_SENSORS};
use crate::rotmath::{axis_angle_to_rot, rot_to_axis_angle, AxisAngle, RotMatrix};
use crate::skeleton::{FullPose, NUM_JOINTS};

pub const FORMAT_VERSION: u32 = 1;

const META_FILE: &str = "meta.json";
const POSES_FILE: &str = "poses.f32";
const ACC_FILE: &str = "imu_acc.f32";
const ROT_FILE: &str = "imu_rot.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionMeta {
    pub format_version: u32,
    pub framerate: f64,
    pub n_frames: usize,
    pub n_joints: usize,
    pub subject: String,
    pub label: String,
    pub has_imu: bool,
    /// Fields written by other tools (e.g. gap-fill flags), kept verbatim.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Real-IMU channel, frame-aligned with the poses.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuChannel {
    /// m/s² per sensor
    pub acc: Vec<[[f32; 3]; NUM_SENSORS]>,
    /// row-major 3×3 per sensor
    pub rot: Vec<[[f32; 9]; NUM_SENSORS]>,
}

/// A motion clip: per-frame local axis-angle rotations of 24 joints (pelvis
/// entry global), plus an optional measured IMU channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub framerate: f64,
    pub subject: String,
    pub label: String,
    pub poses: Vec<[[f32; 3]; NUM_JOINTS]>,
    pub imu: Option<ImuChannel>,
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl MotionSequence {
    pub fn new(framerate: f64, subject: impl Into<String>, label: impl Into<String>) -> Self {
        MotionSequence {
            framerate,
            subject: subject.into(),
            label: label.into(),
            poses: Vec::new(),
            imu: None,
            extra: Default::default(),
        }
    }

    pub fn from_full_poses(
        poses: &[FullPose],
        framerate: f64,
        subject: impl Into<String>,
        label: impl Into<String>,
    ) -> Self {
        let mut seq = Self::new(framerate, subject, label);
        seq.poses = poses.iter().map(encode_pose).collect();
        seq
    }

    pub fn n_frames(&self) -> usize {
        self.poses.len()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.framerate
    }

    pub fn full_pose(&self, t: usize) -> FullPose {
        FullPose(
            self.poses[t]
                .iter()
                .map(|aa| axis_angle_to_rot(&AxisAngle::new(aa[0] as f64, aa[1] as f64, aa[2] as f64)))
                .collect(),
        )
    }

    pub fn full_poses(&self) -> Vec<FullPose> {
        (0..self.n_frames()).map(|t| self.full_pose(t)).collect()
    }

    pub fn imu_frames(&self) -> Option<Vec<ImuFrame>> {
        let imu = self.imu.as_ref()?;
        Some(
            imu.acc
                .iter()
                .zip(&imu.rot)
                .map(|(acc, rot)| {
                    let mut f = ImuFrame::default();
                    for s in 0..NUM_SENSORS {
                        f.sensors[s] = SensorReading {
                            acc: nalgebra::Vector3::new(acc[s][0] as f64, acc[s][1] as f64, acc[s][2] as f64),
                            rot: RotMatrix::from_row_major(&rot[s].map(|v| v as f64)),
                        };
                    }
                    f
                })
                .collect(),
        )
    }

    pub fn set_imu_frames(&mut self, frames: &[ImuFrame]) {
        let acc = frames
            .iter()
            .map(|f| std::array::from_fn(|s| f.sensors[s].acc.map(|v| v as f32).into()))
            .collect();
        let rot = frames
            .iter()
            .map(|f| std::array::from_fn(|s| f.sensors[s].rot.to_row_major().map(|v| v as f32)))
            .collect();
        self.imu = Some(ImuChannel { acc, rot });
    }

    pub fn meta(&self) -> MotionMeta {
        MotionMeta {
            format_version: FORMAT_VERSION,
            framerate: self.framerate,
            n_frames: self.n_frames(),
            n_joints: NUM_JOINTS,
            subject: self.subject.clone(),
            label: self.label.clone(),
            has_imu: self.imu.is_some(),
            extra: self.extra.clone(),
        }
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if !(self.framerate > 0.0) {
            return Err(ProgipError::format(path, format!("framerate must be positive, got {}", self.framerate)));
        }
        if let Some(bad) = self.poses.iter().position(|p| p.iter().flatten().any(|v| !v.is_finite())) {
            return Err(ProgipError::NaN {
                path: path.to_path_buf(),
                what: format!("pose frame {bad}"),
            });
        }
        if let Some(imu) = &self.imu {
            if imu.acc.len() != self.n_frames() || imu.rot.len() != self.n_frames() {
                return Err(ProgipError::format(path, "IMU channel is not frame-aligned"));
            }
            let acc_bad = imu.acc.iter().position(|a| a.iter().flatten().any(|v| !v.is_finite()));
            let rot_bad = imu.rot.iter().position(|a| a.iter().flatten().any(|v| !v.is_finite()));
            if let Some(bad) = acc_bad.or(rot_bad) {
                return Err(ProgipError::NaN {
                    path: path.to_path_buf(),
                    what: format!("IMU frame {bad}"),
                });
            }
        }
        Ok(())
    }
}

fn encode_pose(pose: &FullPose) -> [[f32; 3]; NUM_JOINTS] {
    std::array::from_fn(|j| {
        let aa = rot_to_axis_angle(&pose.0[j]);
        [aa.0.x as f32, aa.0.y as f32, aa.0.z as f32]
    })
}

fn write_f32s(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32s(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(ProgipError::format(
            path,
            format!("expected {} bytes, found {}", expected * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes `meta.json`, `poses.f32` and, when present, `imu_acc.f32` / `imu_rot.f32`.
pub fn save_canonical(seq: &MotionSequence, dir: &Path) -> Result<()> {
    seq.validate(dir)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&seq.meta())?)?;
    write_f32s(&dir.join(POSES_FILE), seq.poses.iter().flatten().flatten().copied())?;
    if let Some(imu) = &seq.imu {
        write_f32s(&dir.join(ACC_FILE), imu.acc.iter().flatten().flatten().copied())?;
        write_f32s(&dir.join(ROT_FILE), imu.rot.iter().flatten().flatten().copied())?;
    } else {
        for f in [ACC_FILE, ROT_FILE] {
            let p = dir.join(f);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
    }
    Ok(())
}

pub fn load_canonical(dir: &Path) -> Result<MotionSequence> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path)?;
    let meta: MotionMeta =
        serde_json::from_str(&meta_text).map_err(|e| ProgipError::format(&meta_path, e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(ProgipError::format(
            &meta_path,
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    if meta.n_joints != NUM_JOINTS {
        return Err(ProgipError::format(&meta_path, format!("n_joints must be 24, got {}", meta.n_joints)));
    }
    let n = meta.n_frames;
    let raw = read_f32s(&dir.join(POSES_FILE), n * NUM_JOINTS * 3)?;
    let poses = raw
        .chunks_exact(NUM_JOINTS * 3)
        .map(|f| std::array::from_fn(|j| [f[j * 3], f[j * 3 + 1], f[j * 3 + 2]]))
        .collect();
    let imu = if meta.has_imu {
        let acc_raw = read_f32s(&dir.join(ACC_FILE), n * NUM_SENSORS * 3)?;
        let rot_raw = read_f32s(&dir.join(ROT_FILE), n * NUM_SENSORS * 9)?;
        Some(ImuChannel {
            acc: acc_raw
                .chunks_exact(NUM_SENSORS * 3)
                .map(|f| std::array::from_fn(|s| [f[s * 3], f[s * 3 + 1], f[s * 3 + 2]]))
                .collect(),
            rot: rot_raw
                .chunks_exact(NUM_SENSORS * 9)
                .map(|f| std::array::from_fn(|s| std::array::from_fn(|k| f[s * 9 + k])))
                .collect(),
        })
    } else {
        None
    };
    let seq = MotionSequence {
        framerate: meta.framerate,
        subject: meta.subject,
        label: meta.label,
        poses,
        imu,
        extra: meta.extra,
    };
    seq.validate(dir)?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_identity_file() {
        let dir = tempfile::tempdir().unwrap();
        let seq = MotionSequence::from_full_poses(&[FullPose::identity()], 60.0, "s1", "idle");
        save_canonical(&seq, dir.path()).unwrap();
        let back = load_canonical(dir.path()).unwrap();
        assert_eq!(back.n_frames(), 1);
        assert!(back.poses[0].iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn truncated_blob_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let seq = MotionSequence::from_full_poses(&vec![FullPose::identity(); 3], 60.0, "s1", "idle");
        save_canonical(&seq, dir.path()).unwrap();
        let p = dir.path().join(POSES_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_canonical(dir.path()), Err(ProgipError::Format { .. })));
    }

    #[test]
    fn nan_pose_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let seq = MotionSequence::from_full_poses(&vec![FullPose::identity(); 2], 60.0, "s1", "idle");
        save_canonical(&seq, dir.path()).unwrap();
        let p = dir.path().join(POSES_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_canonical(dir.path()), Err(ProgipError::NaN { .. })));
    }

    #[test]
    fn bad_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let seq = MotionSequence::from_full_poses(&[FullPose::identity()], 60.0, "s1", "idle");
        save_canonical(&seq, dir.path()).unwrap();
        let p = dir.path().join(META_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"format_version\": 1", "\"format_version\": 7");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_canonical(dir.path()), Err(ProgipError::Format { .. })));
    }
}
