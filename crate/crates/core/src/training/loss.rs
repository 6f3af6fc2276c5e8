use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{ProgipError, Result};
use crate::progressive::StageId;
use crate::rotmath::{six_d_to_rot, six_d_to_rot_vjp, Rot6D};
use crate::skeleton::{forward_kinematics, forward_kinematics_vjp, FullPose, ReducedPose, SkeletonModel, NUM_JOINTS};

/// Loss terms of one stage for one sample (or a batch mean).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    /// Unweighted squared error of the pelvis 6D rotation.
    pub pelvis: f64,
    /// Squared error of the non-pelvis joint rotations.
    pub rotation: f64,
    /// Joint position consistency term (zero when FK loss is off).
    pub position: f64,
    /// `λ · pelvis + rotation + position`.
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.pelvis.is_finite() && self.rotation.is_finite() && self.position.is_finite() && self.total.is_finite()
    }

    pub(crate) fn add_scaled(&mut self, other: &LossReport, s: f64) {
        self.pelvis += other.pelvis * s;
        self.rotation += other.rotation * s;
        self.position += other.position * s;
        self.total += other.total * s;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    /// Weight of the pelvis term.
    pub lambda: f64,
    pub use_fk: bool,
}

/// Loss of one stage's estimate (`stage.out_dim()` values at the supervised
/// frame) against the ground-truth reduced pose. `fk_pelvis` supplies the
/// pelvis rotation used by the position term of stage 4, whose output has no
/// pelvis; it is ignored by the other stages.
pub fn stage_loss(
    stage: StageId,
    est: &[f64],
    target: &ReducedPose,
    skel: &SkeletonModel,
    opts: &LossOptions,
    fk_pelvis: Option<&Rot6D>,
) -> Result<LossReport> {
    stage_loss_with_grad(stage, est, target, skel, opts, fk_pelvis).map(|(r, _)| r)
}

/// [`stage_loss`] plus its gradient with respect to `est`.
pub fn stage_loss_with_grad(
    stage: StageId,
    est: &[f64],
    target: &ReducedPose,
    skel: &SkeletonModel,
    opts: &LossOptions,
    fk_pelvis: Option<&Rot6D>,
) -> Result<(LossReport, Vec<f64>)> {
    if est.len() != stage.out_dim() {
        return Err(ProgipError::shape(stage.out_dim(), est.len()));
    }
    let slots = stage.output_slots();
    let target_flat = target.to_flat();
    let gt = &target_flat[slots.start * 6..slots.end * 6];

    let mut report = LossReport::default();
    let mut grad = vec![0.0; est.len()];
    for (k, (e, t)) in est.iter().zip(gt).enumerate() {
        let d = e - t;
        let pelvis_col = stage.has_pelvis() && k < 6;
        if pelvis_col {
            report.pelvis += d * d;
            grad[k] = 2.0 * opts.lambda * d;
        } else {
            report.rotation += d * d;
            grad[k] = 2.0 * d;
        }
    }

    if opts.use_fk {
        if let Some(set) = stage.stage_set() {
            let pelvis_6d = if stage.has_pelvis() {
                Rot6D::from_slice(&est[..6])
            } else {
                *fk_pelvis.ok_or_else(|| {
                    ProgipError::Config(format!("{} position loss needs a pelvis estimate", stage.name()))
                })?
            };
            let joints: Vec<usize> = set.covered_slots();
            let mut est_pose = FullPose::identity();
            let mut gt_pose = FullPose::identity();
            for &slot in &joints {
                let j = skel.dof_joint(slot);
                gt_pose.0[j] = six_d_to_rot(&target.0[slot])?;
                est_pose.0[j] = if slot == 0 {
                    six_d_to_rot(&pelvis_6d)?
                } else {
                    six_d_to_rot(&est_6d(stage, est, slot))?
                };
            }
            let fk_est = forward_kinematics(skel, &est_pose);
            let fk_gt = forward_kinematics(skel, &gt_pose);
            let mut grad_pos = vec![Vector3::zeros(); NUM_JOINTS];
            for &slot in &joints {
                let j = skel.dof_joint(slot);
                let d = fk_est.positions[j] - fk_gt.positions[j];
                report.position += d.norm_squared();
                grad_pos[j] = 2.0 * d;
            }
            let d_local = forward_kinematics_vjp(skel, &est_pose, &grad_pos);
            for &slot in &joints {
                if slot == 0 && !stage.has_pelvis() {
                    continue;
                }
                let g6 = six_d_to_rot_vjp(&est_6d(stage, est, slot), &d_local[skel.dof_joint(slot)])?;
                let col = (slot - slots.start) * 6;
                for k in 0..6 {
                    grad[col + k] += g6[k];
                }
            }
        }
    }
    report.total = opts.lambda * report.pelvis + report.rotation + report.position;
    Ok((report, grad))
}

fn est_6d(stage: StageId, est: &[f64], slot: usize) -> Rot6D {
    let col = (slot - stage.output_slots().start) * 6;
    Rot6D::from_slice(&est[col..col + 6])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::scripted::random_pose;
    use crate::skeleton::reduce_full;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn slice_of(stage: StageId, pose: &ReducedPose) -> Vec<f64> {
        let s = stage.output_slots();
        pose.to_flat()[s.start * 6..s.end * 6].to_vec()
    }

    #[test]
    fn zero_at_target() {
        let skel = SkeletonModel::smpl_default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = reduce_full(&skel, &random_pose(&mut rng, 1.0));
        let opts = LossOptions { lambda: 0.1, use_fk: true };
        for stage in StageId::ALL {
            let est = slice_of(stage, &target);
            let r = stage_loss(stage, &est, &target, &skel, &opts, Some(&target.0[0])).unwrap();
            assert!(r.total.abs() < 1e-20, "{stage:?} {r:?}");
        }
    }

    #[test]
    fn pelvis_weight() {
        let skel = SkeletonModel::smpl_default();
        let target = ReducedPose::identity();
        let mut est = slice_of(StageId::Stage1, &target);
        est[2] += 1.0;
        let opts = LossOptions { lambda: 0.1, use_fk: false };
        let r = stage_loss(StageId::Stage1, &est, &target, &skel, &opts, None).unwrap();
        assert_eq!(r.pelvis, 1.0);
        assert!((r.total - 0.1).abs() < 1e-15);
        assert_eq!(r.position, 0.0);
    }

    #[test]
    fn stage4_needs_a_pelvis_for_fk() {
        let skel = SkeletonModel::smpl_default();
        let target = ReducedPose::identity();
        let est = slice_of(StageId::Stage4, &target);
        let opts = LossOptions { lambda: 0.1, use_fk: true };
        assert!(stage_loss(StageId::Stage4, &est, &target, &skel, &opts, None).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let skel = SkeletonModel::smpl_default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = reduce_full(&skel, &random_pose(&mut rng, 1.2));
        let guess = reduce_full(&skel, &random_pose(&mut rng, 1.2));
        let fk_pelvis = guess.0[0];
        let opts = LossOptions { lambda: 0.1, use_fk: true };
        for stage in StageId::ALL {
            let mut est = slice_of(stage, &guess);
            for v in est.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
            let (_, g) = stage_loss_with_grad(stage, &est, &target, &skel, &opts, Some(&fk_pelvis)).unwrap();
            let h = 1e-6;
            for k in 0..est.len() {
                let mut up = est.clone();
                up[k] += h;
                let mut down = est.clone();
                down[k] -= h;
                let fd = (stage_loss(stage, &up, &target, &skel, &opts, Some(&fk_pelvis)).unwrap().total
                    - stage_loss(stage, &down, &target, &skel, &opts, Some(&fk_pelvis)).unwrap().total)
                    / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{stage:?}[{k}]: {fd} vs {}", g[k]);
            }
        }
    }
}
