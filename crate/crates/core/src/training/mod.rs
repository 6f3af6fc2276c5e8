//! Losses, the Adam loop over all five networks, and window sampling.
//!
//! Each step forwards every stage on every window of the batch, takes the
//! loss at the supervised frame only, and back-propagates it. With
//! `detach_between_stages` each network only sees its own loss; otherwise
//! gradients also flow through the concatenated stage inputs into upstream
//! networks.

mod adam;
mod data;
mod loss;
mod manifest;

pub use adam::{Adam, AdamConfig};
pub use data::{make_training_windows, prepare_measured, prepare_synthetic, SequenceData, TrainingWindow};
pub use loss::{stage_loss, stage_loss_with_grad, LossOptions, LossReport};
pub use manifest::{synthetic_corpus, SyntheticSpec, TrainManifest};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{ForwardCache, Widths};
use crate::error::{ProgipError, Result};
use crate::progressive::{scatter_input_grad, ProgIpModel, StageId};
use crate::rotmath::Rot6D;

/// Named size/hyperparameter bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    #[default]
    Desk,
}

impl Preset {
    pub fn widths(self) -> Widths {
        match self {
            Preset::Paper => Widths::paper(),
            Preset::Desk => Widths::desk(),
        }
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Paper => TrainConfig::paper(),
            Preset::Desk => TrainConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Pelvis weight.
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// `M`
    pub window: usize,
    /// `N`, 1-based.
    pub supervise_frame: usize,
    /// Frames between consecutive training windows.
    pub stride: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
    pub use_fk_loss: bool,
    pub detach_between_stages: bool,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            lambda: 0.1,
            lr: 1e-4,
            batch: 256,
            seed: 10,
            window: 40,
            supervise_frame: 30,
            stride: 1,
            epochs: 10,
            max_steps: None,
            use_fk_loss: true,
            detach_between_stages: true,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            lr: 3e-3,
            batch: 32,
            ..Self::paper()
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            lambda: self.lambda,
            use_fk: self.use_fk_loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProgipError::Config(m));
        if self.supervise_frame == 0 || self.supervise_frame > self.window {
            return bad(format!("supervise_frame {} outside 1..={}", self.supervise_frame, self.window));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.lr >= 0.0) || self.batch == 0 || self.stride == 0 {
            return bad(format!("invalid lr/batch/stride: {}/{}/{}", self.lr, self.batch, self.stride));
        }
        Ok(())
    }
}

/// Batch-mean losses of all five networks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    /// Indexed by [`StageId::index`].
    pub stages: [LossReport; 5],
    pub total: f64,
}

impl StepReport {
    pub fn stage(&self, id: StageId) -> &LossReport {
        &self.stages[id.index()]
    }
}

/// Adam state for each of the five networks.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub adams: [Adam; 5],
}

impl OptimizerState {
    pub fn new(model: &ProgIpModel, lr: f64) -> Self {
        OptimizerState {
            adams: StageId::ALL.map(|id| Adam::new(model.net(id).num_params(), AdamConfig::with_lr(lr))),
        }
    }
}

fn check_windowing(model: &ProgIpModel, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.window != model.window || cfg.supervise_frame != model.supervise_frame {
        return Err(ProgipError::Config(format!(
            "training window ({}, {}) differs from the model's ({}, {})",
            cfg.window, cfg.supervise_frame, model.window, model.supervise_frame
        )));
    }
    Ok(())
}

fn row_f64(out: &[f32], width: usize, row: usize) -> Vec<f64> {
    out[row * width..(row + 1) * width].iter().map(|v| *v as f64).collect()
}

/// Batch-mean loss and gradients for every network, without updating weights.
pub fn batch_gradients(
    model: &ProgIpModel,
    batch: &[TrainingWindow],
    cfg: &TrainConfig,
) -> Result<(StepReport, [Vec<f32>; 5])> {
    check_windowing(model, cfg)?;
    let m = model.window;
    let e = model.emit_index();
    let scale = 1.0 / batch.len().max(1) as f64;
    let opts = cfg.loss_options();
    let mut report = StepReport::default();
    let mut grads: [Vec<f32>; 5] = StageId::ALL.map(|id| vec![0.0; model.net(id).num_params()]);

    for w in batch {
        let mut caches: [Option<ForwardCache<f32>>; 5] = Default::default();
        let outputs = model.run_pipeline_with(w.features, m, |id, net, input| {
            let (y, cache) = net.forward_cached(&input, m)?;
            caches[id.index()] = Some(cache);
            Ok(y)
        })?;
        let caches = caches.map(|c| c.expect("every stage ran"));

        let pelvis1 = Rot6D::from_slice(&row_f64(&outputs[StageId::Stage1.index()], 24, e)[..6]);
        let mut frame_grads: [Vec<f32>; 5] = Default::default();
        for id in StageId::ALL {
            let est = row_f64(&outputs[id.index()], id.out_dim(), e);
            let (rep, g) = loss::stage_loss_with_grad(id, &est, w.target, &model.skeleton, &opts, Some(&pelvis1))?;
            report.stages[id.index()].add_scaled(&rep, scale);
            frame_grads[id.index()] = g.iter().map(|v| (v * scale) as f32).collect();
        }

        if cfg.detach_between_stages {
            for id in StageId::ALL {
                let k = id.index();
                model.net(id).backward_at_frame(&caches[k], e, &frame_grads[k], &mut grads[k]);
            }
        } else {
            let mut d_out: [Vec<f32>; 5] = StageId::ALL.map(|id| vec![0.0; m * id.out_dim()]);
            for id in StageId::ALL {
                let w = id.out_dim();
                d_out[id.index()][e * w..(e + 1) * w].copy_from_slice(&frame_grads[id.index()]);
            }
            for id in StageId::ALL.into_iter().rev() {
                let k = id.index();
                let dy = std::mem::take(&mut d_out[k]);
                let d_in = model.net(id).backward_into(&caches[k], &dy, &mut grads[k]);
                scatter_input_grad(id, model.stage3_input, &d_in, &mut d_out, m);
            }
        }
    }

    for id in StageId::ALL {
        let rep = report.stage(id);
        if !rep.is_finite() || grads[id.index()].iter().any(|g| !g.is_finite()) {
            return Err(ProgipError::NonFiniteLoss { stage: id.name().into() });
        }
    }
    report.total = report.stages.iter().map(|s| s.total).sum();
    Ok((report, grads))
}

/// One optimizer step over a batch. Weights are left untouched when the loss
/// or a gradient is not finite.
pub fn train_step(
    model: &mut ProgIpModel,
    opt: &mut OptimizerState,
    batch: &[TrainingWindow],
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let (report, grads) = batch_gradients(model, batch, cfg)?;
    for id in StageId::ALL {
        let k = id.index();
        opt.adams[k].step(&mut model.nets[k].params, &grads[k]);
    }
    Ok(report)
}

/// Mean loss over windows, forward only.
pub fn evaluate_loss(model: &ProgIpModel, windows: &[TrainingWindow], cfg: &TrainConfig) -> Result<StepReport> {
    check_windowing(model, cfg)?;
    let m = model.window;
    let e = model.emit_index();
    let opts = cfg.loss_options();
    let scale = 1.0 / windows.len().max(1) as f64;
    let mut report = StepReport::default();
    for w in windows {
        let outputs = model.run_pipeline(w.features, m)?;
        let pelvis1 = Rot6D::from_slice(&row_f64(&outputs[StageId::Stage1.index()], 24, e)[..6]);
        for id in StageId::ALL {
            let est = row_f64(&outputs[id.index()], id.out_dim(), e);
            let rep = stage_loss(id, &est, w.target, &model.skeleton, &opts, Some(&pelvis1))?;
            report.stages[id.index()].add_scaled(&rep, scale);
        }
    }
    report.total = report.stages.iter().map(|s| s.total).sum();
    Ok(report)
}

/// Progress notifications from [`fit`].
pub enum TrainEvent<'a> {
    Step {
        step: usize,
        epoch: usize,
        report: &'a StepReport,
        model: &'a ProgIpModel,
    },
    EpochEnd {
        epoch: usize,
        model: &'a ProgIpModel,
    },
}

/// What [`fit`] does after an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Total loss per step.
    pub losses: Vec<f64>,
    pub epochs_completed: usize,
    /// The event callback asked to stop.
    pub stopped_early: bool,
}

/// Every window start in `data`, as `(sequence, start)`.
fn window_index(data: &[SequenceData], cfg: &TrainConfig) -> Result<Vec<(usize, usize)>> {
    let mut refs = Vec::new();
    for (i, d) in data.iter().enumerate() {
        if d.len() < cfg.window {
            continue;
        }
        refs.extend(make_training_windows(d, cfg.window, cfg.supervise_frame, cfg.stride)?.map(|w| (i, w.start)));
    }
    if refs.is_empty() {
        let longest = data.iter().map(|d| d.len()).max().unwrap_or(0);
        return Err(ProgipError::TooShort {
            needed: cfg.window,
            got: longest,
        });
    }
    Ok(refs)
}

/// Shuffled mini-batch training for `cfg.epochs` epochs (or `cfg.max_steps`).
/// The shuffle is seeded by `cfg.seed`, so identical data and seeds give
/// identical loss curves.
pub fn fit<F>(model: &mut ProgIpModel, data: &[SequenceData], cfg: &TrainConfig, mut on_event: F) -> Result<TrainHistory>
where
    F: FnMut(TrainEvent) -> Result<Control>,
{
    check_windowing(model, cfg)?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 || cfg.max_steps == Some(0) {
        return Ok(history);
    }
    let mut refs = window_index(data, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(model, cfg.lr);
    let n = cfg.supervise_frame;
    let m = cfg.window;
    for epoch in 0..cfg.epochs {
        refs.shuffle(&mut rng);
        for chunk in refs.chunks(cfg.batch) {
            let batch: Vec<TrainingWindow> = chunk
                .iter()
                .map(|&(s, start)| TrainingWindow {
                    start,
                    features: data[s].features[start..start + m].as_flattened(),
                    target: &data[s].targets[start + n - 1],
                })
                .collect();
            let report = train_step(model, &mut opt, &batch, cfg)?;
            history.losses.push(report.total);
            let control = on_event(TrainEvent::Step {
                step: history.losses.len(),
                epoch,
                report: &report,
                model,
            })?;
            let out_of_steps = cfg.max_steps.is_some_and(|s| history.losses.len() >= s);
            if control == Control::Stop || out_of_steps {
                history.stopped_early = control == Control::Stop;
                history.epochs_completed = epoch + 1;
                on_event(TrainEvent::EpochEnd { epoch, model })?;
                return Ok(history);
            }
        }
        history.epochs_completed = epoch + 1;
        if on_event(TrainEvent::EpochEnd { epoch, model })? == Control::Stop {
            history.stopped_early = true;
            break;
        }
    }
    Ok(history)
}

/// Continues training a pretrained model on measured-IMU sequences with a
/// fresh optimizer.
pub fn fine_tune<F>(
    mut model: ProgIpModel,
    data: &[SequenceData],
    cfg: &TrainConfig,
    on_event: F,
) -> Result<(ProgIpModel, TrainHistory)>
where
    F: FnMut(TrainEvent) -> Result<Control>,
{
    if let Some(d) = data.iter().find(|d| !d.measured) {
        return Err(ProgipError::Config(format!(
            "fine-tuning expects measured IMU data; {}/{} is synthetic",
            d.subject, d.label
        )));
    }
    let history = fit(&mut model, data, cfg, on_event)?;
    Ok((model, history))
}
