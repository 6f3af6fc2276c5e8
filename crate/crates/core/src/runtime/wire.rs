//! Newline-delimited sensor records: `t, sensor_id, ax, ay, az, r00, r01, …, r22`.
//!
//! `sensor_id` is `0`/`1`/`2` or `head`/`l_wrist`/`r_wrist`. Blank lines and
//! lines starting with `#` are ignored. A frame is complete once all three
//! sensors have reported the same `t`.

use nalgebra::Vector3;

use crate::error::{ProgipError, Result};
use crate::imusynth::{ImuFrame, SensorReading, NUM_SENSORS};
use crate::rotmath::RotMatrix;

const FIELDS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireRecord {
    pub t: f64,
    pub sensor: usize,
    pub reading: SensorReading,
}

fn sensor_index(s: &str) -> Option<usize> {
    match s.to_ascii_lowercase().as_str() {
        "0" | "head" => Some(0),
        "1" | "l_wrist" | "lwrist" => Some(1),
        "2" | "r_wrist" | "rwrist" => Some(2),
        _ => None,
    }
}

/// Parses one line; `Ok(None)` for blank and comment lines.
pub fn parse_record(line: &str) -> Result<Option<WireRecord>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != FIELDS {
        return Err(ProgipError::Protocol(format!(
            "expected {FIELDS} comma-separated fields, got {}: {line:?}",
            fields.len()
        )));
    }
    let sensor = sensor_index(fields[1])
        .ok_or_else(|| ProgipError::Protocol(format!("unknown sensor id {:?}", fields[1])))?;
    let mut nums = [0.0; FIELDS];
    for (i, f) in fields.iter().enumerate() {
        if i == 1 {
            continue;
        }
        nums[i] = f
            .parse::<f64>()
            .map_err(|_| ProgipError::Protocol(format!("field {i} is not a number: {f:?}")))?;
        if !nums[i].is_finite() {
            return Err(ProgipError::Protocol(format!("field {i} is not finite")));
        }
    }
    let mut r = [0.0; 9];
    r.copy_from_slice(&nums[5..14]);
    let rot = RotMatrix::from_row_major(&r);
    if !rot.is_valid(1e-3) {
        return Err(ProgipError::Protocol(format!("orientation at t={} is not a rotation", nums[0])));
    }
    Ok(Some(WireRecord {
        t: nums[0],
        sensor,
        reading: SensorReading {
            acc: Vector3::new(nums[2], nums[3], nums[4]),
            rot: RotMatrix::project(&rot.0),
        },
    }))
}

/// Groups records into frame triplets.
#[derive(Debug, Default)]
pub struct FrameAssembler {
    t: Option<f64>,
    pending: [Option<SensorReading>; NUM_SENSORS],
    /// Partial frames abandoned because a newer timestamp arrived.
    pub incomplete: u64,
}

impl FrameAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record; returns the finished frame once all sensors for its
    /// timestamp are present.
    pub fn push(&mut self, rec: WireRecord) -> Option<(f64, ImuFrame)> {
        if self.t != Some(rec.t) {
            if self.pending.iter().any(Option::is_some) {
                self.incomplete += 1;
            }
            self.t = Some(rec.t);
            self.pending = [None; NUM_SENSORS];
        }
        self.pending[rec.sensor] = Some(rec.reading);
        if self.pending.iter().all(Option::is_some) {
            let frame = ImuFrame {
                sensors: self.pending.map(|r| r.expect("checked above")),
            };
            self.pending = [None; NUM_SENSORS];
            self.t = None;
            return Some((rec.t, frame));
        }
        None
    }

    /// Parses a line and feeds it to [`Self::push`].
    pub fn push_line(&mut self, line: &str) -> Result<Option<(f64, ImuFrame)>> {
        Ok(parse_record(line)?.and_then(|r| self.push(r)))
    }
}

/// Formats a frame as three wire lines.
pub fn format_frame(t: f64, frame: &ImuFrame) -> String {
    let mut out = String::new();
    for (s, r) in frame.sensors.iter().enumerate() {
        let rot = r.rot.to_row_major();
        out.push_str(&format!("{t},{s},{},{},{}", r.acc.x, r.acc.y, r.acc.z));
        for v in rot {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
