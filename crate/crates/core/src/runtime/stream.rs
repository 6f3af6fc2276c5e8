use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imusynth::{feature_frame, FeatureFrame, ImuFrame};
use crate::progressive::ProgIpModel;
use crate::skeleton::FullPose;

/// Per-frame inference latency in microseconds and queue drops.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TimingStats {
    pub inference_us: Vec<u64>,
    /// Frames discarded by the drop-oldest queue policy.
    pub dropped: u64,
}

impl TimingStats {
    fn sorted(&self) -> Vec<u64> {
        let mut v = self.inference_us.clone();
        v.sort_unstable();
        v
    }

    pub fn median_us(&self) -> Option<f64> {
        let v = self.sorted();
        match v.len() {
            0 => None,
            n if n % 2 == 1 => Some(v[n / 2] as f64),
            n => Some((v[n / 2 - 1] + v[n / 2]) as f64 / 2.0),
        }
    }

    pub fn percentile_us(&self, p: f64) -> Option<f64> {
        let v = self.sorted();
        if v.is_empty() {
            return None;
        }
        let idx = ((p / 100.0) * (v.len() - 1) as f64).round() as usize;
        Some(v[idx.min(v.len() - 1)] as f64)
    }

    pub fn mean_us(&self) -> Option<f64> {
        if self.inference_us.is_empty() {
            return None;
        }
        Some(self.inference_us.iter().sum::<u64>() as f64 / self.inference_us.len() as f64)
    }
}

/// A pose for an input frame `M − N` frames older than the newest one.
#[derive(Debug, Clone, PartialEq)]
pub struct Emitted {
    /// Index of the input frame this pose describes.
    pub frame: u64,
    /// Timestamp of that input frame.
    pub t: f64,
    pub pose: FullPose,
}

/// Ring buffer of the last `M` feature frames.
#[derive(Debug, Clone)]
pub struct StreamState {
    window: usize,
    emit_index: usize,
    frames: VecDeque<FeatureFrame>,
    times: VecDeque<f64>,
    flat: Vec<f32>,
    prev: Option<ImuFrame>,
    seen: u64,
    pub last: Option<Emitted>,
    pub timing: TimingStats,
}

impl StreamState {
    pub fn new(model: &ProgIpModel) -> Self {
        StreamState {
            window: model.window,
            emit_index: model.emit_index(),
            frames: VecDeque::with_capacity(model.window),
            times: VecDeque::with_capacity(model.window),
            flat: Vec::new(),
            prev: None,
            seen: 0,
            last: None,
            timing: TimingStats::default(),
        }
    }

    /// Frames pushed so far.
    pub fn frames_seen(&self) -> u64 {
        self.seen
    }

    pub fn buffered(&self) -> usize {
        self.frames.len()
    }

    /// Pushes one calibrated IMU frame at time `t`. Once `M` frames are
    /// buffered, every call returns the pose of the frame at window row `N − 1`.
    pub fn stream_step(&mut self, model: &ProgIpModel, t: f64, frame: &ImuFrame) -> Result<Option<Emitted>> {
        let features = feature_frame(self.prev.as_ref(), frame, model.acc_scale);
        self.prev = Some(*frame);
        self.push_features(model, t, features)
    }

    /// Same as [`Self::stream_step`] for an already-built feature frame.
    pub fn push_features(&mut self, model: &ProgIpModel, t: f64, features: FeatureFrame) -> Result<Option<Emitted>> {
        if self.frames.len() == self.window {
            self.frames.pop_front();
            self.times.pop_front();
        }
        self.frames.push_back(features);
        self.times.push_back(t);
        self.seen += 1;
        if self.frames.len() < self.window {
            return Ok(None);
        }
        let start = Instant::now();
        self.flat.clear();
        for f in &self.frames {
            self.flat.extend_from_slice(f);
        }
        let pose = model.infer_window(&self.flat)?;
        self.timing.inference_us.push(start.elapsed().as_micros() as u64);
        let emitted = Emitted {
            frame: self.seen - self.window as u64 + self.emit_index as u64,
            t: self.times[self.emit_index],
            pose,
        };
        self.last = Some(emitted.clone());
        Ok(Some(emitted))
    }
}
