use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use crossbeam_channel::{bounded, TrySendError};

use super::stream::{Emitted, StreamState, TimingStats};
use crate::error::{ProgipError, Result};
use crate::imusynth::{align_global_frame, Calibration, ImuFrame};
use crate::progressive::ProgIpModel;

#[derive(Debug, Clone)]
pub struct StreamOptions {
    /// Leading frames used for T-pose calibration; 0 takes input as calibrated.
    pub calibrate_frames: usize,
    /// Queue length between ingestion and inference; the oldest frame is
    /// dropped when it is full. Defaults to `2 M`.
    pub queue_capacity: Option<usize>,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions {
            calibrate_frames: 0,
            queue_capacity: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StreamSummary {
    /// Frames that reached inference, calibration frames included.
    pub frames: u64,
    pub emitted: u64,
    pub timing: TimingStats,
    pub calibration: Option<Calibration>,
}

type Item = Result<(f64, ImuFrame)>;

/// Streams frames from `source` through the model. Ingestion runs on its own
/// thread and never waits for inference; `sink` sees poses in frame order.
pub fn run_stream<I, S>(model: &ProgIpModel, source: I, opts: &StreamOptions, mut sink: S) -> Result<StreamSummary>
where
    I: IntoIterator<Item = Item>,
    I::IntoIter: Send + 'static,
    S: FnMut(&Emitted) -> Result<()>,
{
    let capacity = opts.queue_capacity.unwrap_or(2 * model.window).max(1);
    let (tx, rx) = bounded::<Item>(capacity);
    let dropped = Arc::new(AtomicU64::new(0));
    let ingest_dropped = Arc::clone(&dropped);
    let ingest_rx = rx.clone();
    let source = source.into_iter();
    thread::spawn(move || {
        for item in source {
            let mut pending = item;
            loop {
                match tx.try_send(pending) {
                    Ok(()) => break,
                    Err(TrySendError::Full(back)) => {
                        if ingest_rx.try_recv().is_ok() {
                            ingest_dropped.fetch_add(1, Ordering::Relaxed);
                        }
                        pending = back;
                    }
                    Err(TrySendError::Disconnected(_)) => return,
                }
            }
        }
    });

    let mut state = StreamState::new(model);
    let mut summary = StreamSummary::default();
    let mut tpose: Vec<ImuFrame> = Vec::with_capacity(opts.calibrate_frames);
    for item in rx.iter() {
        let (t, frame) = item?;
        summary.frames += 1;
        if !frame.is_finite() {
            return Err(ProgipError::Protocol(format!("non-finite frame at t={t}")));
        }
        let frame = if opts.calibrate_frames == 0 {
            frame
        } else if let Some(cal) = &summary.calibration {
            align_global_frame(&[frame], cal)[0]
        } else {
            tpose.push(frame);
            if tpose.len() == opts.calibrate_frames {
                summary.calibration = Some(Calibration::from_tpose(&tpose)?);
            }
            continue;
        };
        if let Some(e) = state.stream_step(model, t, &frame)? {
            summary.emitted += 1;
            sink(&e)?;
        }
    }
    if opts.calibrate_frames > 0 && summary.calibration.is_none() {
        return Err(ProgipError::TooShort {
            needed: opts.calibrate_frames,
            got: tpose.len(),
        });
    }
    summary.timing = state.timing;
    summary.timing.dropped = dropped.load(Ordering::Relaxed);
    Ok(summary)
}
