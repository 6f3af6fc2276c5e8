//! Python bindings. Poses cross the boundary as 24 `[x, y, z]` rotation
//! vectors (radians, local; pelvis global), feature windows as lists of
//! 45-float frames.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use progip::datasets::{load_canonical, save_canonical, scripted, MotionSequence};
use progip::imusynth::{build_input, synthesize_imu, ImuFrame, SensorPlacement, SensorReading, SynthOptions, INPUT_DIM};
use progip::metrics::{evaluate_model, JointMask, MetricStats};
use progip::progressive::ProgIpModel;
use progip::rotmath::{axis_angle_to_rot, rot_to_axis_angle, AxisAngle, RotMatrix};
use progip::runtime::StreamState;
use progip::skeleton::{forward_kinematics, FullPose, SkeletonModel, NUM_JOINTS};
use progip::training::{fit, prepare_measured, prepare_synthetic, Control, Preset, SequenceData};
use progip::ProgipError;

type AxisAngles = Vec<[f64; 3]>;

fn err(e: ProgipError) -> PyErr {
    match e {
        ProgipError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_pose(aa: &[[f64; 3]]) -> PyResult<FullPose> {
    if aa.len() != NUM_JOINTS {
        return Err(PyValueError::new_err(format!("a pose has {NUM_JOINTS} joints, got {}", aa.len())));
    }
    Ok(FullPose(aa.iter().map(|v| axis_angle_to_rot(&AxisAngle::new(v[0], v[1], v[2]))).collect()))
}

fn from_pose(p: &FullPose) -> AxisAngles {
    p.0.iter().map(|m| rot_to_axis_angle(m).0.into()).collect()
}

fn to_features(frames: Vec<Vec<f32>>) -> PyResult<Vec<[f32; INPUT_DIM]>> {
    frames
        .into_iter()
        .map(|f| {
            <[f32; INPUT_DIM]>::try_from(f.as_slice())
                .map_err(|_| PyValueError::new_err(format!("feature frames have {INPUT_DIM} values, got {}", f.len())))
        })
        .collect()
}

fn parse_preset(name: &str) -> PyResult<Preset> {
    match name {
        "paper" => Ok(Preset::Paper),
        "desk" => Ok(Preset::Desk),
        other => Err(PyValueError::new_err(format!("unknown preset {other:?}; use \"paper\" or \"desk\""))),
    }
}

fn stats_dict(s: &MetricStats) -> HashMap<String, f64> {
    HashMap::from([
        ("mjre_deg".into(), s.mjre_deg.mean),
        ("mjre_pelvis_deg".into(), s.mjre_pelvis_deg.mean),
        ("mjpe_cm".into(), s.mjpe_cm.mean),
        ("mjpe_wrist_cm".into(), s.mjpe_wrist_cm.mean),
    ])
}

/// SMPL 24-joint kinematic tree.
#[pyclass(name = "Skeleton", module = "progip_py", skip_from_py_object)]
#[derive(Clone)]
struct PySkeleton(SkeletonModel);

#[pymethods]
impl PySkeleton {
    #[new]
    fn new() -> Self {
        PySkeleton(SkeletonModel::smpl_default())
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        SkeletonModel::load(&path).map(PySkeleton).map_err(err)
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.0.names().to_vec()
    }

    /// Root-anchored joint positions in metres.
    fn forward_kinematics(&self, pose: AxisAngles) -> PyResult<Vec<[f64; 3]>> {
        let fk = forward_kinematics(&self.0, &to_pose(&pose)?);
        Ok(fk.positions.iter().map(|p| [p.x, p.y, p.z]).collect())
    }
}

/// A motion clip in the canonical format.
#[pyclass(name = "Motion", module = "progip_py", from_py_object)]
#[derive(Clone)]
struct PyMotion(MotionSequence);

#[pymethods]
impl PyMotion {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        load_canonical(&dir).map(PyMotion).map_err(err)
    }

    /// Procedural motion: `kind` is `mixed`, `walk`, `squat`, `wave`, `reach`, `turn` or `idle`.
    #[staticmethod]
    #[pyo3(signature = (kind, seconds, seed = 10, hz = 60.0))]
    fn scripted(kind: &str, seconds: f64, seed: u64, hz: f64) -> PyResult<Self> {
        let skel = SkeletonModel::smpl_default();
        if kind == "mixed" {
            return Ok(PyMotion(scripted::mixed(&skel, seconds, hz, seed)));
        }
        let k = scripted::MotionKind::ALL
            .into_iter()
            .find(|k| k.label() == kind)
            .ok_or_else(|| PyValueError::new_err(format!("unknown motion kind {kind:?}")))?;
        Ok(PyMotion(scripted::clip(&skel, k, seconds, hz, seed)))
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        save_canonical(&self.0, &dir).map_err(err)
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.0.n_frames()
    }

    #[getter]
    fn framerate(&self) -> f64 {
        self.0.framerate
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label.clone()
    }

    #[getter]
    fn subject(&self) -> String {
        self.0.subject.clone()
    }

    #[getter]
    fn has_imu(&self) -> bool {
        self.0.imu.is_some()
    }

    fn poses(&self) -> Vec<AxisAngles> {
        self.0.full_poses().iter().map(from_pose).collect()
    }

    /// Stores IMU readings synthesized from the clip's own motion.
    fn synthesize_imu(&mut self) -> PyResult<()> {
        let skel = SkeletonModel::smpl_default();
        let place = SensorPlacement::head_and_wrists(&skel).map_err(err)?;
        let imu = synthesize_imu(&skel, &self.0.full_poses(), &place, self.0.dt(), &SynthOptions::default())
            .map_err(err)?;
        self.0.set_imu_frames(&imu);
        Ok(())
    }

    /// Per-frame network input, from the stored IMU channel.
    #[pyo3(signature = (acc_scale = 30.0))]
    fn features(&self, acc_scale: f64) -> PyResult<Vec<Vec<f32>>> {
        let imu = self
            .0
            .imu_frames()
            .ok_or_else(|| PyValueError::new_err("motion has no IMU channel; call synthesize_imu() first"))?;
        Ok(build_input(&imu, acc_scale).iter().map(|f| f.to_vec()).collect())
    }
}

impl PyMotion {
    fn training_data(&self, model: &ProgIpModel) -> PyResult<SequenceData> {
        match self.0.imu {
            Some(_) => prepare_measured(&self.0, &model.skeleton, model.acc_scale),
            None => prepare_synthetic(
                &self.0,
                &model.skeleton,
                &model.placement,
                model.acc_scale,
                &SynthOptions::default(),
            ),
        }
        .map_err(err)
    }
}

/// The five-network pose estimator.
#[pyclass(name = "Model", module = "progip_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel(ProgIpModel);

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset = "desk", seed = 10))]
    fn new(preset: &str, seed: u64) -> PyResult<Self> {
        ProgIpModel::new(parse_preset(preset)?.widths(), SkeletonModel::smpl_default(), seed)
            .map(PyModel)
            .map_err(err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        ProgIpModel::load(&dir, None).map(PyModel).map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(err)
    }

    #[getter]
    fn window(&self) -> usize {
        self.0.window
    }

    #[getter]
    fn supervise_frame(&self) -> usize {
        self.0.supervise_frame
    }

    /// Parameter count per network: global, stage1 … stage4.
    fn num_params(&self) -> Vec<usize> {
        self.0.nets.iter().map(|n| n.num_params()).collect()
    }

    /// Pose for row `N − 1` of one `M`-frame window.
    fn infer_window(&self, features: Vec<Vec<f32>>) -> PyResult<AxisAngles> {
        let frames = to_features(features)?;
        if frames.len() != self.0.window {
            return Err(PyValueError::new_err(format!("window has {} frames, expected {}", frames.len(), self.0.window)));
        }
        self.0.infer_window(frames.as_flattened()).map(|p| from_pose(&p)).map_err(err)
    }

    /// `(frame, pose)` for every full stride-1 window.
    fn predict(&self, features: Vec<Vec<f32>>) -> PyResult<Vec<(usize, AxisAngles)>> {
        let frames = to_features(features)?;
        let out = self.0.predict_sequence(&frames).map_err(err)?;
        Ok(out.iter().map(|(f, p)| (*f, from_pose(p))).collect())
    }

    /// Mean errors on a clip; measured IMU when present, synthesized otherwise.
    fn evaluate(&self, motion: &PyMotion) -> PyResult<HashMap<String, f64>> {
        let data = motion.training_data(&self.0)?;
        let errors = evaluate_model(&self.0, &data, &JointMask::all()).map_err(err)?;
        Ok(stats_dict(&MetricStats::over_frames(&errors)))
    }

    /// Trains in place with the given preset's hyperparameters; returns the
    /// per-step loss.
    #[pyo3(signature = (motions, max_steps, preset = "desk", lr = None, batch = None, seed = None))]
    fn train(
        &mut self,
        motions: Vec<PyMotion>,
        max_steps: usize,
        preset: &str,
        lr: Option<f64>,
        batch: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Vec<f64>> {
        let data = motions
            .iter()
            .map(|m| m.training_data(&self.0))
            .collect::<PyResult<Vec<_>>>()?;
        let mut cfg = parse_preset(preset)?.train_config();
        cfg.epochs = usize::MAX;
        cfg.max_steps = Some(max_steps);
        cfg.window = self.0.window;
        cfg.supervise_frame = self.0.supervise_frame;
        if let Some(lr) = lr {
            cfg.lr = lr;
        }
        if let Some(b) = batch {
            cfg.batch = b;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let history = fit(&mut self.0, &data, &cfg, |_| Ok(Control::Continue)).map_err(err)?;
        Ok(history.losses)
    }
}

/// Sliding-window live inference.
#[pyclass(name = "Stream", module = "progip_py")]
struct PyStream {
    model: ProgIpModel,
    state: StreamState,
}

#[pymethods]
impl PyStream {
    #[new]
    fn new(model: &PyModel) -> Self {
        PyStream {
            state: StreamState::new(&model.0),
            model: model.0.clone(),
        }
    }

    /// Pushes one frame of `(acc[3], rot_row_major[9])` for head, left and
    /// right wrist. Returns `(frame, t, pose)` once the window is full.
    fn push(&mut self, t: f64, sensors: Vec<([f64; 3], [f64; 9])>) -> PyResult<Option<(u64, f64, AxisAngles)>> {
        if sensors.len() != 3 {
            return Err(PyValueError::new_err("expected readings for 3 sensors"));
        }
        let mut frame = ImuFrame::default();
        for (slot, (acc, rot)) in frame.sensors.iter_mut().zip(sensors) {
            *slot = SensorReading {
                acc: acc.into(),
                rot: RotMatrix::from_row_major(&rot),
            };
        }
        let out = self.state.stream_step(&self.model, t, &frame).map_err(err)?;
        Ok(out.map(|e| (e.frame, e.t, from_pose(&e.pose))))
    }

    #[getter]
    fn frames_seen(&self) -> u64 {
        self.state.frames_seen()
    }

    /// Median per-frame inference time in microseconds.
    fn median_us(&self) -> Option<f64> {
        self.state.timing.median_us()
    }
}

/// Mean global joint rotation error in degrees.
#[pyfunction]
fn mjre(pred: Vec<AxisAngles>, gt: Vec<AxisAngles>) -> PyResult<f64> {
    let (p, g) = poses_pair(pred, gt)?;
    progip::metrics::mjre(&p, &g, &SkeletonModel::smpl_default()).map_err(err)
}

/// Mean pelvis-aligned joint position error in centimetres.
#[pyfunction]
fn mjpe(pred: Vec<AxisAngles>, gt: Vec<AxisAngles>) -> PyResult<f64> {
    let (p, g) = poses_pair(pred, gt)?;
    progip::metrics::mjpe(&p, &g, &SkeletonModel::smpl_default()).map_err(err)
}

fn poses_pair(pred: Vec<AxisAngles>, gt: Vec<AxisAngles>) -> PyResult<(Vec<FullPose>, Vec<FullPose>)> {
    let p = pred.iter().map(|a| to_pose(a)).collect::<PyResult<Vec<_>>>()?;
    let g = gt.iter().map(|a| to_pose(a)).collect::<PyResult<Vec<_>>>()?;
    Ok((p, g))
}

#[pymodule]
fn progip_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySkeleton>()?;
    m.add_class::<PyMotion>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyStream>()?;
    m.add_function(wrap_pyfunction!(mjre, m)?)?;
    m.add_function(wrap_pyfunction!(mjpe, m)?)?;
    m.add("INPUT_DIM", INPUT_DIM)?;
    m.add("NUM_JOINTS", NUM_JOINTS)?;
    Ok(())
}
