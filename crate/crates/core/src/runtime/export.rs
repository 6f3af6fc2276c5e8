use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ProgipError, Result};
use crate::rotmath::{axis_angle_to_rot, euler_zxy, rot_to_axis_angle, AxisAngle};
use crate::skeleton::{FullPose, SkeletonModel, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Jsonl,
    Bvh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub frame: u64,
    pub t: f64,
    pub pose: FullPose,
}

#[derive(Serialize, Deserialize)]
struct JsonlLine {
    frame: u64,
    t: f64,
    /// Local joint rotations as rotation vectors (radians).
    axis_angle: Vec<[f64; 3]>,
}

impl From<&PoseRecord> for JsonlLine {
    fn from(r: &PoseRecord) -> Self {
        JsonlLine {
            frame: r.frame,
            t: r.t,
            axis_angle: r.pose.0.iter().map(|m| rot_to_axis_angle(m).0.into()).collect(),
        }
    }
}

/// One JSON object per line: `{"frame", "t", "axis_angle": [[x, y, z]; 24]}`.
pub fn write_jsonl(out: &mut impl Write, records: &[PoseRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, &JsonlLine::from(r))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_jsonl_record(out: &mut impl Write, record: &PoseRecord) -> Result<()> {
    write_jsonl(out, std::slice::from_ref(record))
}

pub fn read_jsonl(input: impl BufRead) -> Result<Vec<PoseRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlLine = serde_json::from_str(&line)
            .map_err(|e| ProgipError::Protocol(format!("pose line {}: {e}", i + 1)))?;
        if rec.axis_angle.len() != NUM_JOINTS {
            return Err(ProgipError::Protocol(format!(
                "pose line {} has {} joints, expected {NUM_JOINTS}",
                i + 1,
                rec.axis_angle.len()
            )));
        }
        let pose = FullPose(
            rec.axis_angle
                .iter()
                .map(|a| axis_angle_to_rot(&AxisAngle::new(a[0], a[1], a[2])))
                .collect(),
        );
        out.push(PoseRecord {
            frame: rec.frame,
            t: rec.t,
            pose,
        });
    }
    Ok(out)
}

fn write_joint(s: &mut String, skel: &SkeletonModel, j: usize, depth: usize) {
    let pad = "  ".repeat(depth);
    let o = skel.offsets()[j] * 100.0;
    let name = &skel.names()[j];
    if depth == 0 {
        let _ = writeln!(s, "ROOT {name}\n{{");
        let _ = writeln!(s, "{pad}  OFFSET 0.000000 0.000000 0.000000");
        let _ = writeln!(s, "{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation");
    } else {
        let _ = writeln!(s, "{pad}JOINT {name}\n{pad}{{");
        let _ = writeln!(s, "{pad}  OFFSET {:.6} {:.6} {:.6}", o.x, o.y, o.z);
        let _ = writeln!(s, "{pad}  CHANNELS 3 Zrotation Xrotation Yrotation");
    }
    let children = skel.children(j);
    if children.is_empty() {
        // extend the leaf along its own bone by half its length
        let e = o * 0.5;
        let _ = writeln!(s, "{pad}  End Site\n{pad}  {{\n{pad}    OFFSET {:.6} {:.6} {:.6}\n{pad}  }}", e.x, e.y, e.z);
    }
    for c in children {
        write_joint(s, skel, c, depth + 1);
    }
    let _ = writeln!(s, "{pad}}}");
}

fn joint_order(skel: &SkeletonModel, j: usize, out: &mut Vec<usize>) {
    out.push(j);
    for c in skel.children(j) {
        joint_order(skel, c, out);
    }
}

/// BVH with the skeleton's rest offsets in centimetres. The root carries
/// zero translation; every joint has ZXY Euler channels in degrees.
pub fn write_bvh(out: &mut impl Write, skel: &SkeletonModel, records: &[PoseRecord], framerate: f64) -> Result<()> {
    if records.is_empty() {
        return Err(ProgipError::Usage("cannot export an empty pose stream".into()));
    }
    let mut s = String::from("HIERARCHY\n");
    write_joint(&mut s, skel, 0, 0);
    let mut order = Vec::with_capacity(NUM_JOINTS);
    joint_order(skel, 0, &mut order);
    let _ = writeln!(s, "MOTION\nFrames: {}\nFrame Time: {:.6}", records.len(), 1.0 / framerate);
    for r in records {
        let mut vals: Vec<f64> = vec![0.0; 3];
        for &j in &order {
            let (z, x, y) = euler_zxy(&r.pose.0[j]);
            vals.extend([z.to_degrees(), x.to_degrees(), y.to_degrees()]);
        }
        let line: Vec<String> = vals.iter().map(|v| format!("{:.6}", v + 0.0)).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::RotMatrix;

    #[test]
    fn identity_frame_gives_zero_channels() {
        let skel = SkeletonModel::smpl_default();
        let mut buf = Vec::new();
        let rec = PoseRecord {
            frame: 0,
            t: 0.0,
            pose: FullPose::identity(),
        };
        write_bvh(&mut buf, &skel, &[rec], 60.0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let last = text.lines().last().unwrap();
        let vals: Vec<f64> = last.split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals.len(), 3 + 3 * NUM_JOINTS);
        assert!(vals.iter().all(|v| *v == 0.0));
        assert_eq!(text.matches("JOINT ").count(), NUM_JOINTS - 1);
        assert_eq!(text.matches('{').count(), text.matches('}').count());
        assert!(text.contains("Frame Time: 0.016667"));
    }

    #[test]
    fn empty_stream_is_rejected() {
        let skel = SkeletonModel::smpl_default();
        assert!(write_bvh(&mut Vec::new(), &skel, &[], 60.0).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut pose = FullPose::identity();
        pose.0[3] = RotMatrix::about_x(0.7).mul(&RotMatrix::about_z(-1.2));
        pose.0[20] = RotMatrix::about_y(3.0);
        let recs = vec![PoseRecord { frame: 29, t: 0.4833, pose }];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back[0].frame, 29);
        for (a, b) in back[0].pose.0.iter().zip(&recs[0].pose.0) {
            assert!((a.0 - b.0).abs().max() < 1e-6);
        }
    }
}
