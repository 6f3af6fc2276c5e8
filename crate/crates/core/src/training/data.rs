use crate::datasets::MotionSequence;
use crate::error::{ProgipError, Result};
use crate::imusynth::{build_input, synthesize_imu, FeatureFrame, SensorPlacement, SynthOptions};
use crate::skeleton::{reduce_full, ReducedPose, SkeletonModel};

/// Feature frames and ground-truth reduced poses for one sequence.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub label: String,
    pub subject: String,
    pub features: Vec<FeatureFrame>,
    pub targets: Vec<ReducedPose>,
    /// Features come from a measured IMU channel rather than synthesis.
    pub measured: bool,
}

impl SequenceData {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Features from IMU readings synthesized out of the sequence's own poses.
pub fn prepare_synthetic(
    seq: &MotionSequence,
    skel: &SkeletonModel,
    placement: &SensorPlacement,
    acc_scale: f64,
    opts: &SynthOptions,
) -> Result<SequenceData> {
    let poses = seq.full_poses();
    let imu = synthesize_imu(skel, &poses, placement, seq.dt(), opts)?;
    Ok(SequenceData {
        label: seq.label.clone(),
        subject: seq.subject.clone(),
        features: build_input(&imu, acc_scale),
        targets: poses.iter().map(|p| reduce_full(skel, p)).collect(),
        measured: false,
    })
}

/// Features from the sequence's recorded IMU channel.
pub fn prepare_measured(seq: &MotionSequence, skel: &SkeletonModel, acc_scale: f64) -> Result<SequenceData> {
    let imu = seq
        .imu_frames()
        .ok_or_else(|| ProgipError::Config(format!("sequence {}/{} has no IMU channel", seq.subject, seq.label)))?;
    Ok(SequenceData {
        label: seq.label.clone(),
        subject: seq.subject.clone(),
        features: build_input(&imu, acc_scale),
        targets: seq.full_poses().iter().map(|p| reduce_full(skel, p)).collect(),
        measured: true,
    })
}

/// One supervised window: `M × 45` features and the target at row `N − 1`.
#[derive(Debug, Clone, Copy)]
pub struct TrainingWindow<'a> {
    pub start: usize,
    pub features: &'a [f32],
    pub target: &'a ReducedPose,
}

/// Sliding windows of `m` frames every `stride` frames, supervised at the
/// `n`-th frame (1-based).
pub fn make_training_windows(
    data: &SequenceData,
    m: usize,
    n: usize,
    stride: usize,
) -> Result<impl Iterator<Item = TrainingWindow<'_>>> {
    if n == 0 || n > m || stride == 0 {
        return Err(ProgipError::Config(format!("invalid window M={m}, N={n}, stride={stride}")));
    }
    if data.len() < m {
        return Err(ProgipError::TooShort {
            needed: m,
            got: data.len(),
        });
    }
    Ok((0..=data.len() - m).step_by(stride).map(move |start| TrainingWindow {
        start,
        features: data.features[start..start + m].as_flattened(),
        target: &data.targets[start + n - 1],
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::FullPose;

    fn data(frames: usize) -> SequenceData {
        let skel = SkeletonModel::smpl_default();
        let seq = MotionSequence::from_full_poses(&vec![FullPose::identity(); frames], 60.0, "s", "idle");
        prepare_synthetic(
            &seq,
            &skel,
            &SensorPlacement::head_and_wrists(&skel).unwrap(),
            30.0,
            &SynthOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_training_windows(&data(40), 40, 30, 1).unwrap().count(), 1);
        assert_eq!(make_training_windows(&data(100), 40, 30, 1).unwrap().count(), 61);
        assert_eq!(make_training_windows(&data(100), 40, 30, 7).unwrap().count(), 9);
    }

    #[test]
    fn supervision_index() {
        let d = data(50);
        let w = make_training_windows(&d, 40, 30, 1).unwrap().nth(5).unwrap();
        assert_eq!(w.start, 5);
        assert!(std::ptr::eq(w.target, &d.targets[5 + 29]));
        assert_eq!(w.features.len(), 40 * 45);
    }

    #[test]
    fn short_sequence_is_rejected() {
        assert!(matches!(
            make_training_windows(&data(39), 40, 30, 1).map(|_| ()),
            Err(ProgipError::TooShort { needed: 40, got: 39 })
        ));
    }

    #[test]
    fn measured_requires_imu() {
        let skel = SkeletonModel::smpl_default();
        let seq = MotionSequence::from_full_poses(&vec![FullPose::identity(); 3], 60.0, "s", "idle");
        assert!(prepare_measured(&seq, &skel, 30.0).is_err());
    }
}
