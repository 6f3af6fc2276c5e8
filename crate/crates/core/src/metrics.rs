//! Rotation and position errors between predicted and reference poses, and
//! per-motion summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{ProgipError, Result};
use crate::progressive::{decode_pose, ProgIpModel};
use crate::rotmath::geodesic_angle_deg;
use crate::training::SequenceData;
use crate::skeleton::{forward_kinematics, FullPose, SkeletonModel, NUM_JOINTS};

/// Joints included in MJRE/MJPE.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointMask(pub Vec<usize>);

impl JointMask {
    pub fn all() -> Self {
        JointMask((0..NUM_JOINTS).collect())
    }

    /// Pelvis, spine, neck, head and arms: every joint outside the legs.
    pub fn upper_body(skel: &SkeletonModel) -> Self {
        let legs = ["L_Hip", "R_Hip"].map(|n| skel.index_of(n).expect("SMPL hip joint"));
        let in_leg = |mut j: usize| loop {
            if legs.contains(&j) {
                return true;
            }
            match skel.parents()[j] {
                Some(p) => j = p,
                None => return false,
            }
        };
        JointMask((0..NUM_JOINTS).filter(|&j| !in_leg(j)).collect())
    }
}

impl Default for JointMask {
    fn default() -> Self {
        Self::all()
    }
}

/// Errors of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameErrors {
    pub mjre_deg: f64,
    pub mjre_pelvis_deg: f64,
    pub mjpe_cm: f64,
    pub mjpe_wrist_cm: f64,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stats {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Stats::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stats {
            mean,
            std: var.max(0.0).sqrt(),
        }
    }
}

fn check_lengths(pred: &[FullPose], gt: &[FullPose]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(ProgipError::LengthMismatch(pred.len(), gt.len()));
    }
    Ok(())
}

fn wrists(skel: &SkeletonModel) -> [usize; 2] {
    ["L_Wrist", "R_Wrist"].map(|n| skel.index_of(n).expect("SMPL wrist joint"))
}

/// Mean pelvis-aligned joint distance in centimetres, from root-relative or
/// absolute positions.
pub fn mjpe_positions(pred: &[Vector3<f64>], gt: &[Vector3<f64>], joints: &[usize], root: usize) -> f64 {
    if joints.is_empty() {
        return 0.0;
    }
    let total: f64 = joints
        .iter()
        .map(|&j| ((pred[j] - pred[root]) - (gt[j] - gt[root])).norm())
        .sum();
    100.0 * total / joints.len() as f64
}

/// Per-frame errors over the joints in `mask`.
pub fn frame_errors(pred: &[FullPose], gt: &[FullPose], skel: &SkeletonModel, mask: &JointMask) -> Result<Vec<FrameErrors>> {
    check_lengths(pred, gt)?;
    let root = skel.dof_joint(0);
    let wrist = wrists(skel);
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let fp = forward_kinematics(skel, p);
            let fg = forward_kinematics(skel, g);
            let ang = |j: usize| geodesic_angle_deg(&fp.global_rot[j], &fg.global_rot[j]);
            let mjre = if mask.0.is_empty() {
                0.0
            } else {
                mask.0.iter().map(|&j| ang(j)).sum::<f64>() / mask.0.len() as f64
            };
            FrameErrors {
                mjre_deg: mjre,
                mjre_pelvis_deg: ang(root),
                mjpe_cm: mjpe_positions(&fp.positions, &fg.positions, &mask.0, root),
                mjpe_wrist_cm: mjpe_positions(&fp.positions, &fg.positions, &wrist, root),
            }
        })
        .collect())
}

/// Runs `model` over every full window of `data` and scores the emitted
/// frames against the decoded targets.
pub fn evaluate_model(model: &ProgIpModel, data: &SequenceData, mask: &JointMask) -> Result<Vec<FrameErrors>> {
    let predicted = model.predict_sequence(&data.features)?;
    let mut pred = Vec::with_capacity(predicted.len());
    let mut gt = Vec::with_capacity(predicted.len());
    for (frame, pose) in predicted {
        pred.push(pose);
        gt.push(decode_pose(&model.skeleton, &data.targets[frame])?);
    }
    frame_errors(&pred, &gt, &model.skeleton, mask)
}

/// Errors of the constant rest pose (identity rotations everywhere) on the
/// same frames [`evaluate_model`] scores.
pub fn rest_pose_baseline(skel: &SkeletonModel, data: &SequenceData, window: usize, supervise_frame: usize, mask: &JointMask) -> Result<Vec<FrameErrors>> {
    if data.len() < window {
        return Err(ProgipError::TooShort { needed: window, got: data.len() });
    }
    let frames = supervise_frame - 1..=data.len() - window + supervise_frame - 1;
    let gt = frames.map(|f| decode_pose(skel, &data.targets[f])).collect::<Result<Vec<_>>>()?;
    let rest = vec![FullPose::identity(); gt.len()];
    frame_errors(&rest, &gt, skel, mask)
}

fn mean_of(errors: &[FrameErrors], f: impl Fn(&FrameErrors) -> f64) -> f64 {
    Stats::of(errors.iter().map(f)).mean
}

/// Mean global-rotation angle over frames × all 24 joints, in degrees.
pub fn mjre(pred: &[FullPose], gt: &[FullPose], skel: &SkeletonModel) -> Result<f64> {
    Ok(mean_of(&frame_errors(pred, gt, skel, &JointMask::all())?, |e| e.mjre_deg))
}

/// Global pelvis rotation error, in degrees.
pub fn mjre_pelvis(pred: &[FullPose], gt: &[FullPose], skel: &SkeletonModel) -> Result<f64> {
    Ok(mean_of(&frame_errors(pred, gt, skel, &JointMask::all())?, |e| e.mjre_pelvis_deg))
}

/// Mean pelvis-aligned joint position error over all 24 joints, in centimetres.
pub fn mjpe(pred: &[FullPose], gt: &[FullPose], skel: &SkeletonModel) -> Result<f64> {
    Ok(mean_of(&frame_errors(pred, gt, skel, &JointMask::all())?, |e| e.mjpe_cm))
}

/// Pelvis-aligned position error of both wrists, in centimetres.
pub fn mjpe_wrist(pred: &[FullPose], gt: &[FullPose], skel: &SkeletonModel) -> Result<f64> {
    Ok(mean_of(&frame_errors(pred, gt, skel, &JointMask::all())?, |e| e.mjpe_wrist_cm))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricStats {
    pub mjre_deg: Stats,
    pub mjre_pelvis_deg: Stats,
    pub mjpe_cm: Stats,
    pub mjpe_wrist_cm: Stats,
}

impl MetricStats {
    /// Statistics over frames.
    pub fn over_frames(errors: &[FrameErrors]) -> Self {
        MetricStats {
            mjre_deg: Stats::of(errors.iter().map(|e| e.mjre_deg)),
            mjre_pelvis_deg: Stats::of(errors.iter().map(|e| e.mjre_pelvis_deg)),
            mjpe_cm: Stats::of(errors.iter().map(|e| e.mjpe_cm)),
            mjpe_wrist_cm: Stats::of(errors.iter().map(|e| e.mjpe_wrist_cm)),
        }
    }

    fn means(&self) -> [f64; 4] {
        [self.mjre_deg.mean, self.mjre_pelvis_deg.mean, self.mjpe_cm.mean, self.mjpe_wrist_cm.mean]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub name: String,
    pub label: String,
    pub frames: usize,
    pub stats: MetricStats,
}

/// Evaluation over several sequences: per-sequence rows and pooled frame statistics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricStats,
    pub frames: usize,
    pub sequences: Vec<SequenceReport>,
    /// Per-frame errors of every sequence, in order; used for grouping.
    #[serde(skip)]
    pub frame_errors: Vec<(String, Vec<FrameErrors>)>,
}

const METRIC_NAMES: [&str; 4] = ["mjre_deg", "mjre_pelvis_deg", "mjpe_cm", "mjpe_wrist_cm"];

impl EvalReport {
    /// Adds one evaluated sequence.
    pub fn push(&mut self, name: &str, label: &str, errors: Vec<FrameErrors>) {
        self.sequences.push(SequenceReport {
            name: name.into(),
            label: label.into(),
            frames: errors.len(),
            stats: MetricStats::over_frames(&errors),
        });
        self.frame_errors.push((label.into(), errors));
        let all: Vec<FrameErrors> = self.frame_errors.iter().flat_map(|(_, e)| e.iter().copied()).collect();
        self.frames = all.len();
        self.overall = MetricStats::over_frames(&all);
    }

    /// Per-sequence rows plus a pooled `overall` row; 4 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,label,frames");
        for n in METRIC_NAMES {
            let _ = write!(out, ",{n}_mean,{n}_std");
        }
        out.push('\n');
        let mut row = |name: &str, label: &str, frames: usize, s: &MetricStats| {
            let _ = write!(out, "{name},{label},{frames}");
            for st in [s.mjre_deg, s.mjre_pelvis_deg, s.mjpe_cm, s.mjpe_wrist_cm] {
                let _ = write!(out, ",{:.4},{:.4}", st.mean, st.std);
            }
            out.push('\n');
        };
        for s in &self.sequences {
            row(&s.name, &s.label, s.frames, &s.stats);
        }
        row("overall", "all", self.frames, &self.overall);
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:<10} {:>7} {:>16} {:>16} {:>16} {:>16}\n",
            "sequence", "label", "frames", "MJRE (deg)", "MJRE-Pelvis", "MJPE (cm)", "MJPE-Wrist"
        );
        let fmt = |s: &Stats| format!("{:.2} ± {:.2}", s.mean, s.std);
        let mut line = |name: &str, label: &str, frames: usize, s: &MetricStats| {
            let _ = writeln!(
                out,
                "{:<24} {:<10} {:>7} {:>16} {:>16} {:>16} {:>16}",
                name,
                label,
                frames,
                fmt(&s.mjre_deg),
                fmt(&s.mjre_pelvis_deg),
                fmt(&s.mjpe_cm),
                fmt(&s.mjpe_wrist_cm)
            );
        };
        for s in &self.sequences {
            line(&s.name, &s.label, s.frames, &s.stats);
        }
        line("overall", "", self.frames, &self.overall);
        out
    }
}

/// One row per motion label with the label's mean errors, followed by the
/// mean and standard deviation of those group means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTable {
    pub rows: Vec<(String, [f64; 4])>,
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

/// Groups per-frame errors by label.
pub fn per_motion_report(groups: &[(String, Vec<FrameErrors>)]) -> MotionTable {
    let mut by_label: BTreeMap<&str, Vec<FrameErrors>> = BTreeMap::new();
    for (label, errs) in groups {
        by_label.entry(label).or_default().extend(errs.iter().copied());
    }
    let rows: Vec<(String, [f64; 4])> = by_label
        .into_iter()
        .map(|(label, errs)| (label.to_string(), MetricStats::over_frames(&errs).means()))
        .collect();
    let col = |k: usize| Stats::of(rows.iter().map(|(_, v)| v[k]));
    let cols = [col(0), col(1), col(2), col(3)];
    MotionTable {
        mean: cols.map(|s| s.mean),
        std: cols.map(|s| s.std),
        rows,
    }
}

impl MotionTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("motion,{}\n", METRIC_NAMES.join(","));
        let mut row = |name: &str, v: &[f64; 4]| {
            let _ = writeln!(out, "{name},{:.4},{:.4},{:.4},{:.4}", v[0], v[1], v[2], v[3]);
        };
        for (label, v) in &self.rows {
            row(label, v);
        }
        row("mean", &self.mean);
        row("std", &self.std);
        out
    }
}
