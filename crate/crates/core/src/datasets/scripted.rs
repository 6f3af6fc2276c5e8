//! Procedurally scripted human motion for synthetic training and tests.
//!
//! Each [`MotionKind`] is a smooth periodic joint-angle program on the SMPL
//! tree (y-up, +x toward the body's left, +z forward). [`mixed`] chains random
//! segments with short geodesic cross-fades and a continuous heading.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rotmath::{slerp, RotMatrix};
use crate::skeleton::{FullPose, SkeletonModel};

use super::canonical::MotionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Walk,
    Squat,
    Wave,
    Reach,
    Turn,
    Idle,
}

impl MotionKind {
    pub const ALL: [MotionKind; 6] = [
        MotionKind::Walk,
        MotionKind::Squat,
        MotionKind::Wave,
        MotionKind::Reach,
        MotionKind::Turn,
        MotionKind::Idle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MotionKind::Walk => "walk",
            MotionKind::Squat => "squat",
            MotionKind::Wave => "wave",
            MotionKind::Reach => "reach",
            MotionKind::Turn => "turn",
            MotionKind::Idle => "idle",
        }
    }

    fn frequency_range(self) -> (f64, f64) {
        match self {
            MotionKind::Walk => (0.7, 1.1),
            MotionKind::Squat => (0.25, 0.45),
            MotionKind::Wave => (1.2, 2.0),
            MotionKind::Reach => (0.3, 0.6),
            MotionKind::Turn => (0.4, 0.8),
            MotionKind::Idle => (0.15, 0.35),
        }
    }

    fn heading_rate_range(self) -> f64 {
        match self {
            MotionKind::Walk => 0.3,
            MotionKind::Turn => 1.2,
            _ => 0.1,
        }
    }
}

/// Per-segment program parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub kind: MotionKind,
    /// Hz
    pub frequency: f64,
    /// scales every joint amplitude
    pub amplitude: f64,
    pub phase: f64,
    /// rad/s of pelvis heading about +y
    pub heading_rate: f64,
}

impl MotionParams {
    pub fn sample(kind: MotionKind, rng: &mut impl Rng) -> Self {
        let (lo, hi) = kind.frequency_range();
        let h = kind.heading_rate_range();
        MotionParams {
            kind,
            frequency: rng.random_range(lo..hi),
            amplitude: rng.random_range(0.6..1.2),
            phase: rng.random_range(0.0..TAU),
            heading_rate: rng.random_range(-h..h),
        }
    }
}

struct Joints {
    pelvis: usize,
    spine: [usize; 3],
    neck: usize,
    head: usize,
    collar: [usize; 2],
    shoulder: [usize; 2],
    elbow: [usize; 2],
    hip: [usize; 2],
    knee: [usize; 2],
}

impl Joints {
    fn new(skel: &SkeletonModel) -> Self {
        let j = |n: &str| skel.index_of(n).expect("SMPL joint names");
        Joints {
            pelvis: j("Pelvis"),
            spine: [j("Spine1"), j("Spine2"), j("Spine3")],
            neck: j("Neck"),
            head: j("Head"),
            collar: [j("L_Collar"), j("R_Collar")],
            shoulder: [j("L_Shoulder"), j("R_Shoulder")],
            elbow: [j("L_Elbow"), j("R_Elbow")],
            hip: [j("L_Hip"), j("R_Hip")],
            knee: [j("L_Knee"), j("R_Knee")],
        }
    }
}

fn rx(a: f64) -> RotMatrix {
    RotMatrix::about_x(a)
}
fn ry(a: f64) -> RotMatrix {
    RotMatrix::about_y(a)
}
fn rz(a: f64) -> RotMatrix {
    RotMatrix::about_z(a)
}

/// Arms hang down from the T-pose by this much at the shoulder.
const ARM_DOWN: f64 = 1.25;

/// Local pose of a program at time `t` (seconds), heading excluded.
fn program_pose(j: &Joints, p: &MotionParams, t: f64) -> FullPose {
    let mut pose = FullPose::identity();
    let phi = TAU * p.frequency * t + p.phase;
    let a = p.amplitude;
    let (s, c) = phi.sin_cos();
    let set = |pose: &mut FullPose, idx: usize, r: RotMatrix| pose.0[idx] = r;

    match p.kind {
        MotionKind::Walk => {
            set(&mut pose, j.pelvis, ry(0.08 * a * s).mul(&rx(0.05 + 0.04 * a * (2.0 * phi).sin())));
            set(&mut pose, j.hip[0], rx(-0.45 * a * s));
            set(&mut pose, j.hip[1], rx(0.45 * a * s));
            set(&mut pose, j.knee[0], rx(0.2 + 0.45 * a * (0.5 + 0.5 * c)));
            set(&mut pose, j.knee[1], rx(0.2 + 0.45 * a * (0.5 - 0.5 * c)));
            for &sp in &j.spine {
                set(&mut pose, sp, ry(-0.05 * a * s));
            }
            set(&mut pose, j.neck, rx(0.04 * (2.0 * phi).sin()));
            set(&mut pose, j.head, ry(0.1 * (0.3 * phi).sin()));
            set(&mut pose, j.shoulder[0], rx(0.4 * a * s).mul(&rz(-ARM_DOWN)));
            set(&mut pose, j.shoulder[1], rx(-0.4 * a * s).mul(&rz(ARM_DOWN)));
            set(&mut pose, j.elbow[0], ry(-0.3 - 0.25 * a * (0.5 + 0.5 * s)));
            set(&mut pose, j.elbow[1], ry(0.3 + 0.25 * a * (0.5 - 0.5 * s)));
        }
        MotionKind::Squat => {
            let depth = a * 0.5 * (1.0 - c);
            set(&mut pose, j.pelvis, rx(0.5 * depth));
            set(&mut pose, j.hip[0], rx(-1.4 * depth));
            set(&mut pose, j.hip[1], rx(-1.4 * depth));
            set(&mut pose, j.knee[0], rx(1.8 * depth));
            set(&mut pose, j.knee[1], rx(1.8 * depth));
            set(&mut pose, j.spine[0], rx(0.1 * depth));
            set(&mut pose, j.neck, rx(-0.3 * depth));
            set(&mut pose, j.shoulder[0], ry(-1.3 * depth).mul(&rz(-ARM_DOWN * (1.0 - depth.min(1.0)))));
            set(&mut pose, j.shoulder[1], ry(1.3 * depth).mul(&rz(ARM_DOWN * (1.0 - depth.min(1.0)))));
            set(&mut pose, j.elbow[0], ry(-0.2));
            set(&mut pose, j.elbow[1], ry(0.2));
        }
        MotionKind::Wave => {
            set(&mut pose, j.pelvis, rz(0.03 * (0.5 * phi).sin()));
            set(&mut pose, j.spine[1], rz(0.05 * a * (0.5 * phi).sin()));
            set(&mut pose, j.collar[1], rz(-0.15 * a));
            set(&mut pose, j.shoulder[1], rz(-0.9 + 0.15 * a * (0.5 * phi).sin()));
            set(&mut pose, j.elbow[1], ry(0.6).mul(&rz(-0.5 * a * s)));
            set(&mut pose, j.shoulder[0], rz(-ARM_DOWN));
            set(&mut pose, j.elbow[0], ry(-0.3));
            set(&mut pose, j.hip[0], rz(0.05 * (0.5 * phi).sin()));
            set(&mut pose, j.hip[1], rz(0.05 * (0.5 * phi).sin()));
            set(&mut pose, j.head, ry(0.2 * a * (0.25 * phi).sin()));
        }
        MotionKind::Reach => {
            let ul = (0.5 * (1.0 + s)).powi(2);
            let ur = (0.5 * (1.0 - s)).powi(2);
            set(&mut pose, j.spine[1], ry(0.25 * a * s));
            set(&mut pose, j.spine[2], ry(0.15 * a * s).mul(&rx(0.15 * a * (ul + ur))));
            set(&mut pose, j.shoulder[0], ry(-1.2 * a * ul).mul(&rz(-ARM_DOWN + 0.9 * a * ul)));
            set(&mut pose, j.shoulder[1], ry(1.2 * a * ur).mul(&rz(ARM_DOWN - 0.9 * a * ur)));
            set(&mut pose, j.elbow[0], ry(-0.8 * (1.0 - ul)));
            set(&mut pose, j.elbow[1], ry(0.8 * (1.0 - ur)));
            set(&mut pose, j.hip[0], rx(-0.15 * a * ul));
            set(&mut pose, j.hip[1], rx(-0.15 * a * ur));
            set(&mut pose, j.knee[0], rx(0.25 * a * ul));
            set(&mut pose, j.knee[1], rx(0.25 * a * ur));
            set(&mut pose, j.head, rx(0.2 * a * (ul + ur)));
        }
        MotionKind::Turn => {
            set(&mut pose, j.pelvis, rz(0.06 * a * s));
            set(&mut pose, j.hip[0], rx(-0.25 * a * s.max(0.0)).mul(&rz(0.1 * a * s)));
            set(&mut pose, j.hip[1], rx(-0.25 * a * (-s).max(0.0)).mul(&rz(0.1 * a * s)));
            set(&mut pose, j.knee[0], rx(0.4 * a * s.max(0.0)));
            set(&mut pose, j.knee[1], rx(0.4 * a * (-s).max(0.0)));
            set(&mut pose, j.spine[2], ry(0.2 * a * c));
            set(&mut pose, j.head, ry(0.3 * a * c));
            set(&mut pose, j.shoulder[0], rz(-0.8 + 0.2 * a * s));
            set(&mut pose, j.shoulder[1], rz(0.8 + 0.2 * a * s));
            set(&mut pose, j.elbow[0], ry(-0.4));
            set(&mut pose, j.elbow[1], ry(0.4));
        }
        MotionKind::Idle => {
            set(&mut pose, j.pelvis, rz(0.04 * a * s).mul(&rx(0.02 * c)));
            set(&mut pose, j.hip[0], rz(-0.04 * a * s));
            set(&mut pose, j.hip[1], rz(-0.04 * a * s));
            set(&mut pose, j.knee[0], rx(0.05 + 0.05 * a * (0.5 + 0.5 * s)));
            set(&mut pose, j.knee[1], rx(0.05 + 0.05 * a * (0.5 - 0.5 * s)));
            set(&mut pose, j.spine[0], rz(-0.03 * a * s));
            set(&mut pose, j.neck, rx(0.05 * c));
            set(&mut pose, j.head, ry(0.25 * a * (0.7 * phi).sin()).mul(&rx(0.1 * s)));
            set(&mut pose, j.collar[0], rz(0.05 * s));
            set(&mut pose, j.collar[1], rz(-0.05 * s));
            set(&mut pose, j.shoulder[0], rz(-ARM_DOWN + 0.1 * a * s));
            set(&mut pose, j.shoulder[1], rz(ARM_DOWN - 0.1 * a * c));
            set(&mut pose, j.elbow[0], ry(-0.3 - 0.2 * a * (0.5 + 0.5 * c)));
            set(&mut pose, j.elbow[1], ry(0.3 + 0.2 * a * (0.5 + 0.5 * s)));
        }
    }
    pose
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

struct Segment {
    params: MotionParams,
    start: f64,
}

const CROSSFADE_S: f64 = 0.5;

fn render(skel: &SkeletonModel, segments: &[Segment], seconds: f64, fps: f64, subject: &str, label: &str) -> MotionSequence {
    let joints = Joints::new(skel);
    let n = (seconds * fps).round().max(1.0) as usize;
    let dt = 1.0 / fps;
    let mut heading = 0.0;
    let mut seg = 0;
    let mut poses = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        while seg + 1 < segments.len() && t >= segments[seg + 1].start {
            seg += 1;
        }
        let cur = &segments[seg];
        let mut pose = program_pose(&joints, &cur.params, t - cur.start);
        let mut rate = cur.params.heading_rate;
        if seg > 0 {
            let prev = &segments[seg - 1];
            let w = smoothstep((t - cur.start) / CROSSFADE_S);
            if w < 1.0 {
                let old = program_pose(&joints, &prev.params, t - prev.start);
                for (o, r) in old.0.iter().zip(pose.0.iter_mut()) {
                    *r = slerp(o, r, w);
                }
                rate = prev.params.heading_rate * (1.0 - w) + rate * w;
            }
        }
        if k > 0 {
            heading += rate * dt;
        }
        pose.0[joints.pelvis] = ry(heading).mul(&pose.0[joints.pelvis]);
        poses.push(pose);
    }
    MotionSequence::from_full_poses(&poses, fps, subject, label)
}

/// A single-program clip.
pub fn clip(skel: &SkeletonModel, kind: MotionKind, seconds: f64, fps: f64, seed: u64) -> MotionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = MotionParams::sample(kind, &mut rng);
    render(skel, &[Segment { params, start: 0.0 }], seconds, fps, &format!("scripted-{seed}"), kind.label())
}

/// Random programs of 3–8 s each, cross-faded. Labelled `"mixed"`.
pub fn mixed(skel: &SkeletonModel, seconds: f64, fps: f64, seed: u64) -> MotionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();
    let mut start = 0.0;
    while start < seconds {
        let kind = MotionKind::ALL[rng.random_range(0..MotionKind::ALL.len())];
        segments.push(Segment {
            params: MotionParams::sample(kind, &mut rng),
            start,
        });
        start += rng.random_range(3.0..8.0);
    }
    render(skel, &segments, seconds, fps, &format!("scripted-{seed}"), "mixed")
}

/// Heading-free random full pose with joint angles up to `max_angle` radians.
pub fn random_pose(rng: &mut impl Rng, max_angle: f64) -> FullPose {
    use crate::rotmath::{axis_angle_to_rot, AxisAngle};
    FullPose(
        (0..crate::skeleton::NUM_JOINTS)
            .map(|_| {
                let v = nalgebra::Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let angle = rng.random_range(0.0..max_angle.min(PI));
                axis_angle_to_rot(&AxisAngle(v.normalize() * angle))
            })
            .collect(),
    )
}
