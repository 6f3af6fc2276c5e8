//! The five-network pipeline: a global rough estimate of all 16 DOF joints,
//! then four stages ordered by kinematic-chain depth, fused into one pose.
//!
//! Stage inputs are built per frame by concatenation:
//!
//! | stage  | input                                   | in  | out |
//! |--------|-----------------------------------------|-----|-----|
//! | global | `X`                                     | 45  | 96  |
//! | 1      | `X1 = [X, p_global]`                    | 141 | 24  |
//! | 2      | `X2 = [X1, pelvis1, p1]`                | 165 | 42  |
//! | 3      | `[X1, pelvis2, p2]` (or `[X2, p_d2]`)   | 183 | 72  |
//! | 4      | `X4 = [X1, pelvis1]`                    | 147 | 24  |
//!
//! Every stage output is a contiguous run of canonical DOF slots in 6D
//! (stages 1 to 3 start at the pelvis, stage 4 covers slots 12..16). The
//! final pose takes pelvis and upper body from stage 3 and the legs from
//! stage 4.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{load_checkpoint, save_checkpoint, Backbone, BackboneConfig, Widths, PELVIS_DIM};
use crate::error::{ProgipError, Result};
use crate::imusynth::{FeatureFrame, SensorPlacement, DEFAULT_ACC_SCALE, INPUT_DIM, SENSOR_JOINT_NAMES};
use crate::rotmath::Rot6D;
use crate::skeleton::{expand_reduced, FullPose, ReducedPose, SkeletonModel, StageSet, REDUCED_DIM};

pub const DEFAULT_WINDOW: usize = 40;
/// 1-based index of the emitted frame inside the window.
pub const DEFAULT_SUPERVISE_FRAME: usize = 30;
pub const PIPELINE_FILE: &str = "pipeline.json";
pub const SKELETON_FILE: &str = "skeleton.json";
const PIPELINE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageId {
    Global,
    Stage1,
    Stage2,
    Stage3,
    Stage4,
}

impl StageId {
    pub const ALL: [StageId; 5] = [StageId::Global, StageId::Stage1, StageId::Stage2, StageId::Stage3, StageId::Stage4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            StageId::Global => "global",
            StageId::Stage1 => "stage1",
            StageId::Stage2 => "stage2",
            StageId::Stage3 => "stage3",
            StageId::Stage4 => "stage4",
        }
    }

    pub fn in_dim(self) -> usize {
        match self {
            StageId::Global => INPUT_DIM,
            StageId::Stage1 => 141,
            StageId::Stage2 => 165,
            StageId::Stage3 => 183,
            StageId::Stage4 => 147,
        }
    }

    pub fn out_dim(self) -> usize {
        self.output_slots().len() * 6
    }

    /// Canonical DOF slots emitted, in column order.
    pub fn output_slots(self) -> Range<usize> {
        match self {
            StageId::Global => 0..16,
            StageId::Stage1 => 0..4,
            StageId::Stage2 => 0..7,
            StageId::Stage3 => 0..12,
            StageId::Stage4 => 12..16,
        }
    }

    /// Whether the first six output columns are the pelvis rotation.
    pub fn has_pelvis(self) -> bool {
        self != StageId::Stage4
    }

    /// Joint set for the position-consistency loss; `None` for the global estimator.
    pub fn stage_set(self) -> Option<StageSet> {
        match self {
            StageId::Global => None,
            StageId::Stage1 => Some(StageSet::Upper1),
            StageId::Stage2 => Some(StageSet::Upper2),
            StageId::Stage3 => Some(StageSet::Upper3),
            StageId::Stage4 => Some(StageSet::Lower),
        }
    }

    pub fn checkpoint_file(self) -> String {
        format!("{}.ckpt", self.name())
    }

    pub fn backbone_config(self, widths: Widths) -> BackboneConfig {
        BackboneConfig::new(self.in_dim(), self.out_dim(), self.has_pelvis(), widths)
    }

    /// Human-readable input composition, recorded in `pipeline.json`.
    pub fn recipe(self, stage3: Stage3Input) -> &'static str {
        match (self, stage3) {
            (StageId::Global, _) => "X",
            (StageId::Stage1, _) => "[X, p_global]",
            (StageId::Stage2, _) => "[X1, pelvis1, p1]",
            (StageId::Stage3, Stage3Input::Fig1) => "[X1, pelvis2, p2]",
            (StageId::Stage3, Stage3Input::Text) => "[X2, p_d2]",
            (StageId::Stage4, _) => "[X1, pelvis1]",
        }
    }
}

/// Composition of the stage-3 input. Both variants are 183 wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage3Input {
    /// `[X1, pelvis2, p2]`: the stage-2 re-estimates of pelvis and spine.
    #[default]
    Fig1,
    /// `[X2, p_d2]`: stage-2 input plus the stage-2 region-d2 joints.
    Text,
}

/// Column ranges of an upstream tensor copied into a stage input, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Raw features `X` (45).
    Features,
    Net(StageId),
}

/// Column pieces `(source, columns)` concatenated into a stage's input.
pub fn input_recipe(stage: StageId, stage3: Stage3Input) -> Vec<(Source, Range<usize>)> {
    use Source::*;
    let x1 = vec![(Features, 0..INPUT_DIM), (Net(StageId::Global), 0..REDUCED_DIM)];
    let mut pieces = match stage {
        StageId::Global => return vec![(Features, 0..INPUT_DIM)],
        StageId::Stage1 => x1,
        StageId::Stage2 => [x1, vec![(Net(StageId::Stage1), 0..24)]].concat(),
        StageId::Stage3 => match stage3 {
            Stage3Input::Fig1 => [x1, vec![(Net(StageId::Stage2), 0..42)]].concat(),
            Stage3Input::Text => [
                x1,
                vec![(Net(StageId::Stage1), 0..24), (Net(StageId::Stage2), 24..42)],
            ]
            .concat(),
        },
        StageId::Stage4 => [x1, vec![(Net(StageId::Stage1), 0..PELVIS_DIM)]].concat(),
    };
    pieces.shrink_to_fit();
    pieces
}

/// Builds an `m × in_dim` stage input from the features and upstream outputs.
pub fn compose_input(
    stage: StageId,
    stage3: Stage3Input,
    x: &[f32],
    outputs: &[Option<Vec<f32>>; 5],
    m: usize,
) -> Result<Vec<f32>> {
    let recipe = input_recipe(stage, stage3);
    let width: usize = recipe.iter().map(|(_, r)| r.len()).sum();
    if width != stage.in_dim() {
        return Err(ProgipError::shape(stage.in_dim(), width));
    }
    let mut out = Vec::with_capacity(m * width);
    for t in 0..m {
        for (src, cols) in &recipe {
            let (data, stride) = match src {
                Source::Features => (x, INPUT_DIM),
                Source::Net(id) => {
                    let data = outputs[id.index()].as_deref().ok_or_else(|| {
                        ProgipError::Config(format!("{} output needed before {}", id.name(), stage.name()))
                    })?;
                    (data, id.out_dim())
                }
            };
            out.extend_from_slice(&data[t * stride + cols.start..t * stride + cols.end]);
        }
    }
    Ok(out)
}

/// Scatters a stage-input gradient back onto the upstream outputs it was built from.
/// Gradients for the raw features are discarded.
pub fn scatter_input_grad(
    stage: StageId,
    stage3: Stage3Input,
    d_input: &[f32],
    d_outputs: &mut [Vec<f32>; 5],
    m: usize,
) {
    let recipe = input_recipe(stage, stage3);
    let width = stage.in_dim();
    for t in 0..m {
        let mut col = 0;
        for (src, cols) in &recipe {
            if let Source::Net(id) = src {
                let stride = id.out_dim();
                let dst = &mut d_outputs[id.index()][t * stride + cols.start..t * stride + cols.end];
                for (d, g) in dst.iter_mut().zip(&d_input[t * width + col..t * width + col + cols.len()]) {
                    *d += *g;
                }
            }
            col += cols.len();
        }
    }
}

/// Five trained networks plus the geometry and windowing they were trained with.
#[derive(Debug, Clone)]
pub struct ProgIpModel {
    /// Indexed by [`StageId::index`].
    pub nets: [Backbone<f32>; 5],
    pub skeleton: SkeletonModel,
    pub placement: SensorPlacement,
    pub acc_scale: f64,
    /// `M`
    pub window: usize,
    /// `N`, 1-based.
    pub supervise_frame: usize,
    pub stage3_input: Stage3Input,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageEntry {
    id: StageId,
    file: String,
    in_dim: usize,
    out_dim: usize,
    input: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PipelineManifest {
    format_version: u32,
    stages: Vec<StageEntry>,
    acc_scale: f64,
    window: usize,
    supervise_frame: usize,
    stage3_input: Stage3Input,
    sensors: Vec<String>,
    skeleton_hash: String,
}

impl ProgIpModel {
    /// Freshly initialized networks; network `k` is seeded with `seed + k`.
    pub fn new(widths: Widths, skeleton: SkeletonModel, seed: u64) -> Result<Self> {
        let placement = SensorPlacement::head_and_wrists(&skeleton)?;
        let nets = StageId::ALL
            .map(|id| Backbone::new(id.backbone_config(widths), seed.wrapping_add(id.index() as u64)));
        let [a, b, c, d, e] = nets;
        Ok(ProgIpModel {
            nets: [a?, b?, c?, d?, e?],
            skeleton,
            placement,
            acc_scale: DEFAULT_ACC_SCALE,
            window: DEFAULT_WINDOW,
            supervise_frame: DEFAULT_SUPERVISE_FRAME,
            stage3_input: Stage3Input::default(),
        })
    }

    pub fn net(&self, id: StageId) -> &Backbone<f32> {
        &self.nets[id.index()]
    }

    /// Window row whose pose is emitted (`N − 1`).
    pub fn emit_index(&self) -> usize {
        self.supervise_frame - 1
    }

    /// Frames of lookahead, `M − N`.
    pub fn lookahead(&self) -> usize {
        self.window - self.supervise_frame
    }

    pub fn validate(&self) -> Result<()> {
        if self.supervise_frame == 0 || self.supervise_frame > self.window {
            return Err(ProgipError::Config(format!(
                "supervised frame {} must lie in 1..={}",
                self.supervise_frame, self.window
            )));
        }
        if !(self.acc_scale > 0.0) {
            return Err(ProgipError::Config(format!("acc_scale must be positive, got {}", self.acc_scale)));
        }
        for id in StageId::ALL {
            let c = self.net(id).config();
            if c.in_dim != id.in_dim() || c.out_dim != id.out_dim() || c.pelvis_head != id.has_pelvis() {
                return Err(ProgipError::shape(
                    format!("{} {}→{}", id.name(), id.in_dim(), id.out_dim()),
                    format!("{}→{}", c.in_dim, c.out_dim),
                ));
            }
        }
        Ok(())
    }

    fn check_window<'a>(&self, x: &'a [f32], m: usize) -> Result<&'a [f32]> {
        if m == 0 || x.len() != m * INPUT_DIM {
            return Err(ProgipError::shape(format!("{m} x {INPUT_DIM}"), format!("{} values", x.len())));
        }
        Ok(x)
    }

    /// Global rough estimate `S_XN(X)`, `m × 96`.
    pub fn estimate_global(&self, x: &[f32], m: usize) -> Result<Vec<f32>> {
        let x = self.check_window(x, m)?;
        self.net(StageId::Global).forward(x, m)
    }

    /// Runs all five networks in depth order. `run` evaluates one network on
    /// its composed input; it may keep caches (training) or alter outputs (tests).
    /// Returns every network's `m × out_dim` output, indexed by stage.
    pub fn run_pipeline_with<F>(&self, x: &[f32], m: usize, mut run: F) -> Result<[Vec<f32>; 5]>
    where
        F: FnMut(StageId, &Backbone<f32>, Vec<f32>) -> Result<Vec<f32>>,
    {
        let x = self.check_window(x, m)?;
        let mut outputs: [Option<Vec<f32>>; 5] = Default::default();
        for id in StageId::ALL {
            let input = compose_input(id, self.stage3_input, x, &outputs, m)?;
            debug_assert_eq!(input.len(), m * id.in_dim());
            let y = run(id, self.net(id), input)?;
            if y.len() != m * id.out_dim() {
                return Err(ProgipError::shape(m * id.out_dim(), y.len()));
            }
            outputs[id.index()] = Some(y);
        }
        Ok(outputs.map(|o| o.expect("every stage ran")))
    }

    pub fn run_pipeline(&self, x: &[f32], m: usize) -> Result<[Vec<f32>; 5]> {
        self.run_pipeline_with(x, m, |_, net, input| net.forward(&input, m))
    }

    /// Fused reduced pose at row `frame` of the pipeline outputs.
    pub fn fuse(outputs: &[Vec<f32>; 5], frame: usize) -> ReducedPose {
        let s3 = &outputs[StageId::Stage3.index()];
        let s4 = &outputs[StageId::Stage4.index()];
        let w3 = StageId::Stage3.out_dim();
        let w4 = StageId::Stage4.out_dim();
        let mut flat = [0.0f64; REDUCED_DIM];
        for (k, v) in s3[frame * w3..(frame + 1) * w3].iter().enumerate() {
            flat[k] = *v as f64;
        }
        for (k, v) in s4[frame * w4..(frame + 1) * w4].iter().enumerate() {
            flat[w3 + k] = *v as f64;
        }
        ReducedPose(std::array::from_fn(|s| Rot6D::from_slice(&flat[s * 6..s * 6 + 6])))
    }

    /// Progressive estimate for one `M × 45` window at the supervised frame.
    pub fn run_stages(&self, x: &[f32]) -> Result<ReducedPose> {
        let outputs = self.run_pipeline(x, self.window)?;
        Ok(Self::fuse(&outputs, self.emit_index()))
    }

    /// [`Self::run_stages`] followed by [`decode_pose`].
    pub fn infer_window(&self, x: &[f32]) -> Result<FullPose> {
        decode_pose(&self.skeleton, &self.run_stages(x)?)
    }

    /// Stride-1 windows over a feature sequence. Returns `(frame index, pose)`
    /// for frames `N−1 ..= T−M+N−1`.
    pub fn predict_sequence(&self, features: &[FeatureFrame]) -> Result<Vec<(usize, FullPose)>> {
        let m = self.window;
        if features.len() < m {
            return Err(ProgipError::TooShort {
                needed: m,
                got: features.len(),
            });
        }
        (0..=features.len() - m)
            .map(|start| {
                let x = features[start..start + m].as_flattened();
                Ok((start + self.emit_index(), self.infer_window(x)?))
            })
            .collect()
    }

    /// Writes the five checkpoints, `pipeline.json` and a copy of the skeleton asset.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        for id in StageId::ALL {
            save_checkpoint(self.net(id), &dir.join(id.checkpoint_file()))?;
        }
        let manifest = PipelineManifest {
            format_version: PIPELINE_FORMAT_VERSION,
            stages: StageId::ALL
                .iter()
                .map(|&id| StageEntry {
                    id,
                    file: id.checkpoint_file(),
                    in_dim: id.in_dim(),
                    out_dim: id.out_dim(),
                    input: id.recipe(self.stage3_input).into(),
                })
                .collect(),
            acc_scale: self.acc_scale,
            window: self.window,
            supervise_frame: self.supervise_frame,
            stage3_input: self.stage3_input,
            sensors: SENSOR_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            skeleton_hash: self.skeleton.asset_hash(),
        };
        fs::write(dir.join(PIPELINE_FILE), serde_json::to_string_pretty(&manifest)?)?;
        fs::write(dir.join(SKELETON_FILE), self.skeleton.to_json())?;
        Ok(())
    }

    /// Loads a bundle. `skeleton` overrides the bundled asset but must hash identically.
    pub fn load(dir: &Path, skeleton: Option<SkeletonModel>) -> Result<Self> {
        let manifest_path = dir.join(PIPELINE_FILE);
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: PipelineManifest =
            serde_json::from_str(&text).map_err(|e| ProgipError::format(&manifest_path, e.to_string()))?;
        if manifest.format_version != PIPELINE_FORMAT_VERSION {
            return Err(ProgipError::format(
                &manifest_path,
                format!("unsupported format_version {}", manifest.format_version),
            ));
        }
        let skeleton = match skeleton {
            Some(s) => s,
            None => {
                let p = dir.join(SKELETON_FILE);
                if p.exists() {
                    SkeletonModel::load(&p)?
                } else {
                    SkeletonModel::smpl_default()
                }
            }
        };
        if skeleton.asset_hash() != manifest.skeleton_hash {
            return Err(ProgipError::Config(format!(
                "skeleton asset hash {} does not match the model's {}",
                skeleton.asset_hash(),
                manifest.skeleton_hash
            )));
        }
        let mut nets = Vec::with_capacity(5);
        for id in StageId::ALL {
            let entry = manifest
                .stages
                .iter()
                .find(|e| e.id == id)
                .ok_or_else(|| ProgipError::format(&manifest_path, format!("missing stage {}", id.name())))?;
            nets.push(load_checkpoint(&dir.join(&entry.file))?);
        }
        let nets: [Backbone<f32>; 5] = nets.try_into().expect("five stages");
        let model = ProgIpModel {
            nets,
            placement: SensorPlacement::head_and_wrists(&skeleton)?,
            skeleton,
            acc_scale: manifest.acc_scale,
            window: manifest.window,
            supervise_frame: manifest.supervise_frame,
            stage3_input: manifest.stage3_input,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Decodes the 16 estimated 6D rotations onto the full 24-joint skeleton.
pub fn decode_pose(skel: &SkeletonModel, reduced: &ReducedPose) -> Result<FullPose> {
    expand_reduced(skel, reduced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::NUM_DOF_JOINTS;

    fn tiny_model() -> ProgIpModel {
        let mut w = Widths::desk();
        w.d_model = 16;
        w.ff_dim = 16;
        w.rnn_width = 8;
        w.decoder_hidden = 16;
        w.tf_layers = 1;
        ProgIpModel::new(w, SkeletonModel::smpl_default(), 10).unwrap()
    }

    fn features(m: usize) -> Vec<f32> {
        (0..m * INPUT_DIM).map(|i| ((i * 7 % 13) as f32 - 6.0) * 0.1).collect()
    }

    #[test]
    fn dimension_table() {
        let dims: Vec<_> = StageId::ALL.iter().map(|s| (s.in_dim(), s.out_dim())).collect();
        assert_eq!(dims, [(45, 96), (141, 24), (165, 42), (183, 72), (147, 24)]);
        for stage3 in [Stage3Input::Fig1, Stage3Input::Text] {
            for id in StageId::ALL {
                let w: usize = input_recipe(id, stage3).iter().map(|(_, r)| r.len()).sum();
                assert_eq!(w, id.in_dim(), "{id:?} {stage3:?}");
            }
        }
    }

    #[test]
    fn fused_slots_cover_every_dof_joint_once() {
        let mut seen = [0; NUM_DOF_JOINTS];
        for s in StageId::Stage3.output_slots().chain(StageId::Stage4.output_slots()) {
            seen[s] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(StageId::Stage3.out_dim() + StageId::Stage4.out_dim(), REDUCED_DIM);
    }

    #[test]
    fn global_estimate_shape_and_determinism() {
        let model = tiny_model();
        let x = features(40);
        let a = model.estimate_global(&x, 40).unwrap();
        assert_eq!(a.len(), 40 * 96);
        assert_eq!(a, model.estimate_global(&x, 40).unwrap());
        assert!(matches!(model.estimate_global(&x[1..], 40), Err(ProgipError::ShapeMismatch { .. })));
    }

    #[test]
    fn composed_inputs_copy_upstream_columns() {
        let model = tiny_model();
        let m = 3;
        let x = features(m);
        let mut inputs = Vec::new();
        let outputs = model
            .run_pipeline_with(&x, m, |_, net, input| {
                inputs.push(input.clone());
                net.forward(&input, m)
            })
            .unwrap();
        let t = 2;
        let x3 = &inputs[3][t * 183..(t + 1) * 183];
        assert_eq!(&x3[..45], &x[t * 45..(t + 1) * 45]);
        assert_eq!(&x3[45..141], &outputs[0][t * 96..(t + 1) * 96]);
        assert_eq!(&x3[141..], &outputs[2][t * 42..(t + 1) * 42]);
        let x4 = &inputs[4][t * 147..(t + 1) * 147];
        assert_eq!(&x4[141..], &outputs[1][t * 24..t * 24 + 6]);
    }

    #[test]
    fn later_stages_never_feed_back() {
        let model = tiny_model();
        let x = features(40);
        let clean = model.run_pipeline(&x, 40).unwrap();
        let perturbed = model
            .run_pipeline_with(&x, 40, |id, net, input| {
                let mut y = net.forward(&input, 40)?;
                if id == StageId::Stage3 {
                    y.iter_mut().for_each(|v| *v += 1.0);
                }
                Ok(y)
            })
            .unwrap();
        for id in [StageId::Global, StageId::Stage1, StageId::Stage2, StageId::Stage4] {
            assert_eq!(clean[id.index()], perturbed[id.index()], "{id:?}");
        }
        assert_ne!(clean[3], perturbed[3]);
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = tiny_model();
        model.stage3_input = Stage3Input::Text;
        model.save(dir.path()).unwrap();
        let back = ProgIpModel::load(dir.path(), None).unwrap();
        assert_eq!(back.stage3_input, Stage3Input::Text);
        let x = features(40);
        assert_eq!(model.run_stages(&x).unwrap(), back.run_stages(&x).unwrap());

        let text = fs::read_to_string(dir.path().join(PIPELINE_FILE)).unwrap();
        assert!(text.contains("\"[X2, p_d2]\""));
    }

    #[test]
    fn mismatched_skeleton_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        tiny_model().save(dir.path()).unwrap();
        let json = SkeletonModel::smpl_default().to_json().replacen("0.", "0.0001", 1);
        let other = SkeletonModel::from_json_str(&json).unwrap();
        assert!(matches!(ProgIpModel::load(dir.path(), Some(other)), Err(ProgipError::Config(_))));
    }

    #[test]
    fn identity_decodes_to_rest_pose() {
        let skel = SkeletonModel::smpl_default();
        let pose = decode_pose(&skel, &ReducedPose::identity()).unwrap();
        assert_eq!(pose, FullPose::identity());
    }
}
