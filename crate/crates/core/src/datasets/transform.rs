use crate::imusynth::{ImuFrame, NUM_SENSORS};
use crate::rotmath::{axis_angle_to_rot, rot_to_axis_angle, slerp, AxisAngle, RotMatrix};

use super::canonical::MotionSequence;

/// Rotation taking z-up capture frames into the y-up IMU reference frame
/// (−90° about x).
pub const AMASS_TO_DIP_ROW_MAJOR: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0];

fn to_rot(aa: &[f32; 3]) -> RotMatrix {
    axis_angle_to_rot(&AxisAngle::new(aa[0] as f64, aa[1] as f64, aa[2] as f64))
}

fn to_aa(r: &RotMatrix) -> [f32; 3] {
    let aa = rot_to_axis_angle(r);
    [aa.0.x as f32, aa.0.y as f32, aa.0.z as f32]
}

/// Resamples to `target_hz` by per-joint geodesic interpolation. Endpoints are
/// kept: the output spans the same first and last frames, with
/// `round((n − 1) · target / source) + 1` frames.
pub fn resample(seq: &MotionSequence, target_hz: f64) -> MotionSequence {
    let n = seq.n_frames();
    if n < 2 || seq.framerate == target_hz {
        let mut out = seq.clone();
        out.framerate = target_hz;
        return out;
    }
    let n_out = (((n - 1) as f64) * target_hz / seq.framerate).round() as usize + 1;
    let n_out = n_out.max(2);
    let step = (n - 1) as f64 / (n_out - 1) as f64;
    let sample = |k: usize| -> (usize, f64) {
        let s = k as f64 * step;
        let i = (s.floor() as usize).min(n - 1);
        let alpha = s - i as f64;
        if i == n - 1 || alpha < 1e-12 {
            (i, 0.0)
        } else {
            (i, alpha)
        }
    };

    let mut out = seq.clone();
    out.framerate = target_hz;
    out.poses = (0..n_out)
        .map(|k| {
            let (i, alpha) = sample(k);
            if alpha == 0.0 {
                return seq.poses[i];
            }
            std::array::from_fn(|j| {
                let r = slerp(&to_rot(&seq.poses[i][j]), &to_rot(&seq.poses[i + 1][j]), alpha);
                to_aa(&r)
            })
        })
        .collect();

    if let Some(frames) = seq.imu_frames() {
        let resampled: Vec<ImuFrame> = (0..n_out)
            .map(|k| {
                let (i, alpha) = sample(k);
                if alpha == 0.0 {
                    return frames[i];
                }
                let mut f = ImuFrame::default();
                for s in 0..NUM_SENSORS {
                    let (a, b) = (&frames[i].sensors[s], &frames[i + 1].sensors[s]);
                    f.sensors[s].acc = a.acc * (1.0 - alpha) + b.acc * alpha;
                    f.sensors[s].rot = slerp(&a.rot, &b.rot, alpha);
                }
                f
            })
            .collect();
        let original = seq.imu.clone().expect("imu present");
        out.set_imu_frames(&resampled);
        // keep untouched frames bit-exact
        if let Some(imu) = out.imu.as_mut() {
            for k in 0..n_out {
                let (i, alpha) = sample(k);
                if alpha == 0.0 {
                    imu.acc[k] = original.acc[i];
                    imu.rot[k] = original.rot[i];
                }
            }
        }
    }
    out
}

/// Left-multiplies the pelvis (global) rotation by `g`. A measured IMU
/// channel, if any, is rotated into the same frame.
pub fn align_orientation(seq: &MotionSequence, g: &RotMatrix) -> MotionSequence {
    let mut out = seq.clone();
    if *g == RotMatrix::identity() {
        return out;
    }
    for pose in &mut out.poses {
        pose[0] = to_aa(&g.mul(&to_rot(&pose[0])));
    }
    if let Some(frames) = seq.imu_frames() {
        let rotated: Vec<ImuFrame> = frames
            .iter()
            .map(|f| {
                let mut o = *f;
                for s in 0..NUM_SENSORS {
                    o.sensors[s].rot = g.mul(&f.sensors[s].rot);
                    o.sensors[s].acc = g.apply(&f.sensors[s].acc);
                }
                o
            })
            .collect();
        out.set_imu_frames(&rotated);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::geodesic_angle_deg;
    use crate::skeleton::FullPose;

    fn seq_about_x(angles: &[f64], hz: f64) -> MotionSequence {
        let poses: Vec<FullPose> = angles
            .iter()
            .map(|&a| {
                let mut p = FullPose::identity();
                p.0[0] = RotMatrix::about_x(a);
                p.0[4] = RotMatrix::about_x(a * 0.5);
                p
            })
            .collect();
        MotionSequence::from_full_poses(&poses, hz, "s", "l")
    }

    #[test]
    fn same_rate_is_identity() {
        let s = seq_about_x(&[0.0, 0.1, 0.2], 60.0);
        assert_eq!(resample(&s, 60.0), s);
    }

    #[test]
    fn halving_rate() {
        let angles: Vec<f64> = (0..121).map(|i| i as f64 * 0.01).collect();
        let s = seq_about_x(&angles, 120.0);
        let r = resample(&s, 60.0);
        assert_eq!(r.n_frames(), 61);
        assert_eq!(r.framerate, 60.0);
        assert_eq!(r.poses[0], s.poses[0]);
        assert_eq!(r.poses[60], s.poses[120]);
    }

    #[test]
    fn doubling_rate_midpoints() {
        let s = seq_about_x(&[0.0, 0.4, 0.2, 1.0], 30.0);
        let r = resample(&s, 60.0);
        assert_eq!(r.n_frames(), 7);
        for k in 0..3 {
            let mid = r.full_pose(2 * k + 1);
            let a = s.full_pose(k);
            let b = s.full_pose(k + 1);
            for j in [0, 4] {
                let oracle = slerp(&a.0[j], &b.0[j], 0.5);
                assert!(geodesic_angle_deg(&mid.0[j], &oracle).to_radians() < 1e-6);
            }
        }
    }

    #[test]
    fn align_then_inverse() {
        let s = seq_about_x(&[0.3, -0.2], 60.0);
        let g = RotMatrix::from_row_major(&AMASS_TO_DIP_ROW_MAJOR);
        assert_eq!(align_orientation(&s, &RotMatrix::identity()), s);
        let back = align_orientation(&align_orientation(&s, &g), &g.transpose());
        for (a, b) in back.full_poses().iter().zip(s.full_poses()) {
            assert!(geodesic_angle_deg(&a.0[0], &b.0[0]) < 1e-4);
        }
    }
}
