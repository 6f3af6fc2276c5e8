//! SMPL-topology kinematic tree: forward kinematics, reduced/full pose
//! conversion and the four-region partition by kinematic-chain depth.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ProgipError, Result};
use crate::rotmath::{rot_to_6d, six_d_to_rot, Rot6D, RotMatrix};

pub const NUM_JOINTS: usize = 24;
pub const NUM_DOF_JOINTS: usize = 16;
pub const REDUCED_DIM: usize = NUM_DOF_JOINTS * 6;

/// Canonical joint order of a [`ReducedPose`].
pub const DOF_JOINT_NAMES: [&str; NUM_DOF_JOINTS] = [
    "Pelvis", "Spine1", "Spine2", "Spine3", "Neck", "L_Collar", "R_Collar", "Head", "L_Shoulder",
    "R_Shoulder", "L_Elbow", "R_Elbow", "L_Hip", "R_Hip", "L_Knee", "R_Knee",
];

/// Joints without rotational degrees of freedom; always identity.
pub const FIXED_JOINT_NAMES: [&str; 8] = [
    "L_Wrist", "R_Wrist", "L_Hand", "R_Hand", "L_Ankle", "R_Ankle", "L_Foot", "R_Foot",
];

pub const DEFAULT_SKELETON_JSON: &str = include_str!("../assets/smpl_skeleton.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    D1,
    D2,
    D3,
    D4,
}

impl Region {
    pub const DEPTH_ORDER: [Region; 4] = [Region::D1, Region::D2, Region::D3, Region::D4];

    /// Canonical slots of the region's joints.
    pub fn slots(self) -> std::ops::Range<usize> {
        match self {
            Region::D1 => 0..4,
            Region::D2 => 4..7,
            Region::D3 => 7..12,
            Region::D4 => 12..16,
        }
    }

    pub fn of_slot(slot: usize) -> Option<Region> {
        Region::DEPTH_ORDER.into_iter().find(|r| r.slots().contains(&slot))
    }
}

/// Joint sets covered by the four progressive stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageSet {
    /// d1
    Upper1,
    /// d1 ∪ d2
    Upper2,
    /// d1 ∪ d2 ∪ d3
    Upper3,
    /// pelvis ∪ d4
    Lower,
}

impl StageSet {
    pub const ALL: [StageSet; 4] = [StageSet::Upper1, StageSet::Upper2, StageSet::Upper3, StageSet::Lower];

    /// Canonical slots whose rotations the stage supplies, pelvis excluded.
    pub fn joint_slots(self) -> std::ops::Range<usize> {
        match self {
            StageSet::Upper1 => 1..4,
            StageSet::Upper2 => 1..7,
            StageSet::Upper3 => 1..12,
            StageSet::Lower => 12..16,
        }
    }

    /// Pelvis followed by [`Self::joint_slots`].
    pub fn covered_slots(self) -> Vec<usize> {
        std::iter::once(0).chain(self.joint_slots()).collect()
    }

    fn from_slots(slots: &[usize]) -> Option<StageSet> {
        let mut sorted = slots.to_vec();
        sorted.sort_unstable();
        StageSet::ALL
            .into_iter()
            .find(|s| s.joint_slots().eq(sorted.iter().copied()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkeletonAsset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    names: Vec<String>,
    parents: Vec<i64>,
    offsets: Vec<[f64; 3]>,
}

/// Immutable 24-joint kinematic tree.
#[derive(Debug, Clone)]
pub struct SkeletonModel {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    offsets: Vec<Vector3<f64>>,
    /// canonical slot → joint index
    dof_joints: [usize; NUM_DOF_JOINTS],
    /// joint index → canonical slot
    slot_of: [Option<usize>; NUM_JOINTS],
    asset_json: String,
}

/// Region membership of every joint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    pub region: Vec<Option<Region>>,
    pub depth_order: [Region; 4],
}

/// 16 DOF joint rotations in canonical order (96 scalars).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedPose(pub [Rot6D; NUM_DOF_JOINTS]);

/// 24 local rotations; the pelvis entry is the global orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPose(pub Vec<RotMatrix>);

#[derive(Debug, Clone)]
pub struct FkResult {
    pub positions: Vec<Vector3<f64>>,
    pub global_rot: Vec<RotMatrix>,
}

impl ReducedPose {
    pub fn identity() -> Self {
        ReducedPose([Rot6D::IDENTITY; NUM_DOF_JOINTS])
    }

    pub fn to_flat(&self) -> [f64; REDUCED_DIM] {
        let mut out = [0.0; REDUCED_DIM];
        for (chunk, r) in out.chunks_exact_mut(6).zip(self.0.iter()) {
            chunk.copy_from_slice(&r.0);
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != REDUCED_DIM {
            return Err(ProgipError::shape(REDUCED_DIM, v.len()));
        }
        Ok(ReducedPose(std::array::from_fn(|i| Rot6D::from_slice(&v[i * 6..i * 6 + 6]))))
    }
}

impl FullPose {
    pub fn identity() -> Self {
        FullPose(vec![RotMatrix::identity(); NUM_JOINTS])
    }
}

impl SkeletonModel {
    pub fn smpl_default() -> Self {
        Self::from_json_str(DEFAULT_SKELETON_JSON).expect("bundled skeleton asset is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(|e| match e {
            ProgipError::Json(j) => ProgipError::format(path, j.to_string()),
            ProgipError::Config(m) => ProgipError::format(path, m),
            other => other,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let asset: SkeletonAsset = serde_json::from_str(text)?;
        let n = asset.names.len();
        if n != NUM_JOINTS || asset.parents.len() != n || asset.offsets.len() != n {
            return Err(ProgipError::Config(format!(
                "skeleton needs {NUM_JOINTS} names/parents/offsets, got {}/{}/{}",
                n,
                asset.parents.len(),
                asset.offsets.len()
            )));
        }
        let mut parents = Vec::with_capacity(n);
        let mut roots = 0;
        for (i, &p) in asset.parents.iter().enumerate() {
            if p < 0 {
                roots += 1;
                parents.push(None);
            } else if (p as usize) < i {
                parents.push(Some(p as usize));
            } else {
                return Err(ProgipError::Config(format!(
                    "joint {i} has parent {p}; parents must precede children"
                )));
            }
        }
        if roots != 1 || parents[0].is_some() {
            return Err(ProgipError::Config("skeleton must have exactly one root at index 0".into()));
        }
        if asset.offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ProgipError::Config("non-finite rest offset".into()));
        }
        let index_of = |name: &str| -> Result<usize> {
            asset
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| ProgipError::Config(format!("skeleton has no joint named {name}")))
        };
        if asset.names[0] != "Pelvis" {
            return Err(ProgipError::Config("root joint must be Pelvis".into()));
        }
        let mut dof_joints = [0; NUM_DOF_JOINTS];
        let mut slot_of = [None; NUM_JOINTS];
        for (slot, name) in DOF_JOINT_NAMES.iter().enumerate() {
            let j = index_of(name)?;
            dof_joints[slot] = j;
            slot_of[j] = Some(slot);
        }
        for name in FIXED_JOINT_NAMES {
            index_of(name)?;
        }
        Ok(SkeletonModel {
            names: asset.names,
            parents,
            offsets: asset.offsets.iter().map(|o| Vector3::from(*o)).collect(),
            dof_joints,
            slot_of,
            asset_json: text.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        self.asset_json.clone()
    }

    /// Hex SHA-256 of the asset text this skeleton was loaded from.
    pub fn asset_hash(&self) -> String {
        let digest = Sha256::digest(self.asset_json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn offsets(&self) -> &[Vector3<f64>] {
        &self.offsets
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Joint index for a canonical DOF slot.
    pub fn dof_joint(&self, slot: usize) -> usize {
        self.dof_joints[slot]
    }

    pub fn slot_of(&self, joint: usize) -> Option<usize> {
        self.slot_of[joint]
    }

    pub fn region_partition(&self) -> RegionPartition {
        RegionPartition {
            region: (0..NUM_JOINTS)
                .map(|j| self.slot_of[j].and_then(Region::of_slot))
                .collect(),
            depth_order: Region::DEPTH_ORDER,
        }
    }

    /// Edges from the root, per joint.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            depth[j] = depth[self.parents[j].unwrap()] + 1;
        }
        depth
    }

    pub fn children(&self, joint: usize) -> Vec<usize> {
        (0..NUM_JOINTS).filter(|&c| self.parents[c] == Some(joint)).collect()
    }
}

/// Global rotations and root-anchored joint positions.
pub fn forward_kinematics(skel: &SkeletonModel, pose: &FullPose) -> FkResult {
    let mut global_rot = Vec::with_capacity(NUM_JOINTS);
    let mut positions = Vec::with_capacity(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        match skel.parents[j] {
            None => {
                global_rot.push(pose.0[j]);
                positions.push(Vector3::zeros());
            }
            Some(p) => {
                let gp: RotMatrix = global_rot[p];
                positions.push(positions[p] + gp.0 * skel.offsets[j]);
                global_rot.push(gp.mul(&pose.0[j]));
            }
        }
    }
    FkResult {
        positions,
        global_rot,
    }
}

/// Reverse-mode pass of [`forward_kinematics`] positions: returns `∂L/∂local_rot[j]`
/// given `∂L/∂positions[j]`.
pub fn forward_kinematics_vjp(
    skel: &SkeletonModel,
    pose: &FullPose,
    grad_positions: &[Vector3<f64>],
) -> Vec<Matrix3<f64>> {
    let fk = forward_kinematics(skel, pose);
    let mut d_pos: Vec<Vector3<f64>> = grad_positions.to_vec();
    let mut d_global = vec![Matrix3::zeros(); NUM_JOINTS];
    let mut d_local = vec![Matrix3::zeros(); NUM_JOINTS];
    for j in (0..NUM_JOINTS).rev() {
        match skel.parents[j] {
            None => d_local[j] = d_global[j],
            Some(p) => {
                let gp = fk.global_rot[p].0;
                let dp = d_pos[j];
                d_pos[p] += dp;
                d_global[p] += dp * skel.offsets[j].transpose();
                d_local[j] = gp.transpose() * d_global[j];
                let dg = d_global[j] * pose.0[j].0.transpose();
                d_global[p] += dg;
            }
        }
    }
    d_local
}

/// Decodes the 16 DOF joints and fixes the remaining 8 to identity.
pub fn expand_reduced(skel: &SkeletonModel, pose: &ReducedPose) -> Result<FullPose> {
    let mut full = FullPose::identity();
    for (slot, r6) in pose.0.iter().enumerate() {
        full.0[skel.dof_joints[slot]] = six_d_to_rot(r6)?;
    }
    Ok(full)
}

pub fn reduce_full(skel: &SkeletonModel, pose: &FullPose) -> ReducedPose {
    ReducedPose(std::array::from_fn(|slot| rot_to_6d(&pose.0[skel.dof_joints[slot]])))
}

/// Builds the partial pose seen by a stage: pelvis plus the supplied joints,
/// every other joint at identity. The joint set must be one of the four stage sets.
pub fn stage_pose(
    skel: &SkeletonModel,
    rotations: &[(usize, RotMatrix)],
    pelvis: &RotMatrix,
) -> Result<(StageSet, FullPose)> {
    let slots: Vec<usize> = rotations
        .iter()
        .map(|(j, _)| {
            skel.slot_of
                .get(*j)
                .copied()
                .flatten()
                .ok_or_else(|| ProgipError::InvalidPrefix(format!("joint {j} has no rotational DOF")))
        })
        .collect::<Result<_>>()?;
    let set = StageSet::from_slots(&slots).ok_or_else(|| {
        let names: Vec<&str> = slots.iter().map(|&s| DOF_JOINT_NAMES[s]).collect();
        ProgipError::InvalidPrefix(names.join(","))
    })?;
    let mut pose = FullPose::identity();
    pose.0[skel.dof_joints[0]] = *pelvis;
    for (j, r) in rotations {
        pose.0[*j] = *r;
    }
    Ok((set, pose))
}

/// Positions of the pelvis and the supplied joints, computed by FK with every
/// other joint at identity. Returned in canonical slot order as `(joint, position)`.
pub fn subchain_fk(
    skel: &SkeletonModel,
    rotations: &[(usize, RotMatrix)],
    pelvis: &RotMatrix,
) -> Result<Vec<(usize, Vector3<f64>)>> {
    let (set, pose) = stage_pose(skel, rotations, pelvis)?;
    let fk = forward_kinematics(skel, &pose);
    Ok(set
        .covered_slots()
        .into_iter()
        .map(|slot| {
            let j = skel.dof_joints[slot];
            (j, fk.positions[j])
        })
        .collect())
}
