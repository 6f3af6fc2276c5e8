use progip::backbone::Widths;
use progip::datasets::scripted;
use progip::imusynth::{build_input, synthesize_imu, Calibration, ImuFrame, SensorPlacement, SynthOptions};
use progip::metrics::{frame_errors, JointMask};
use progip::progressive::ProgIpModel;
use progip::rotmath::RotMatrix;
use progip::runtime::{format_frame, run_stream, FrameAssembler, StreamOptions, StreamState};
use progip::skeleton::{FullPose, SkeletonModel};

fn model() -> ProgIpModel {
    let w = Widths {
        d_model: 8,
        heads: 2,
        ff_dim: 16,
        tf_layers: 1,
        rnn_layers: 1,
        rnn_width: 8,
        decoder_hidden: 16,
        ..Widths::desk()
    };
    ProgIpModel::new(w, SkeletonModel::smpl_default(), 21).unwrap()
}

fn imu(seconds: f64, seed: u64) -> Vec<ImuFrame> {
    let skel = SkeletonModel::smpl_default();
    let seq = scripted::mixed(&skel, seconds, 60.0, seed);
    let place = SensorPlacement::head_and_wrists(&skel).unwrap();
    synthesize_imu(&skel, &seq.full_poses(), &place, seq.dt(), &SynthOptions::default()).unwrap()
}

#[test]
fn streaming_matches_batch_windows() {
    let m = model();
    let frames = imu(4.0, 3);
    let batch = m.predict_sequence(&build_input(&frames, m.acc_scale)).unwrap();
    let mut state = StreamState::new(&m);
    let mut streamed = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        if let Some(e) = state.stream_step(&m, i as f64 / 60.0, f).unwrap() {
            assert_eq!(i as u64 - e.frame, 10);
            streamed.push((e.frame as usize, e.pose));
        }
    }
    assert_eq!(streamed, batch);
}

#[test]
fn threaded_stream_keeps_order_and_counts_drops() {
    let m = model();
    let frames = imu(3.0, 4);
    let n = frames.len() as u64;
    let source: Vec<_> = frames.iter().enumerate().map(|(i, f)| Ok((i as f64, *f))).collect();
    let mut seen = Vec::new();
    let opts = StreamOptions {
        calibrate_frames: 0,
        queue_capacity: Some(2),
    };
    let summary = run_stream(&m, source, &opts, |e| {
        seen.push(e.frame);
        Ok(())
    })
    .unwrap();
    assert_eq!(summary.frames + summary.timing.dropped, n);
    assert_eq!(summary.emitted as usize, seen.len());
    assert!(seen.windows(2).all(|w| w[0] < w[1]));

    let roomy = StreamOptions {
        calibrate_frames: 0,
        queue_capacity: Some(frames.len()),
    };
    let source: Vec<_> = frames.iter().enumerate().map(|(i, f)| Ok((i as f64, *f))).collect();
    let s = run_stream(&m, source, &roomy, |_| Ok(())).unwrap();
    assert_eq!((s.frames, s.timing.dropped, s.emitted), (n, 0, n - 39));
}

#[test]
fn tpose_calibration_undoes_heading_and_mounting() {
    let m = model();
    let body = imu(2.0, 6);
    let rest = vec![ImuFrame::default(); 30];
    // raw = G⁻¹ · body · C⁻¹, with a yaw-only G so the T-pose recovers it exactly
    let truth = Calibration {
        global: RotMatrix::about_y(0.8),
        sensor: [
            RotMatrix::about_x(0.3),
            RotMatrix::about_z(-1.1).mul(&RotMatrix::about_y(0.4)),
            RotMatrix::about_x(2.0),
        ],
    };
    let inv = truth.inverse();
    let raw: Vec<ImuFrame> = rest
        .iter()
        .chain(&body)
        .map(|f| {
            let mut out = *f;
            for s in 0..3 {
                out.sensors[s].rot = inv.global.mul(&f.sensors[s].rot).mul(&inv.sensor[s]);
                out.sensors[s].acc = inv.global.apply(&f.sensors[s].acc);
            }
            out
        })
        .collect();

    let run = |frames: &[ImuFrame], k: usize| {
        let mut poses: Vec<FullPose> = Vec::new();
        let opts = StreamOptions {
            calibrate_frames: k,
            queue_capacity: Some(frames.len()),
        };
        let src: Vec<_> = frames.iter().enumerate().map(|(i, f)| Ok((i as f64, *f))).collect();
        let s = run_stream(&m, src, &opts, |e| {
            poses.push(e.pose.clone());
            Ok(())
        })
        .unwrap();
        (poses, s)
    };
    let (calibrated, summary) = run(&raw, rest.len());
    let (direct, _) = run(&body, 0);
    assert!(summary.calibration.unwrap().is_valid());
    assert_eq!(calibrated.len(), direct.len());
    let errs = frame_errors(&calibrated, &direct, &m.skeleton, &JointMask::all()).unwrap();
    let worst = errs.iter().map(|e| e.mjre_deg).fold(0.0, f64::max);
    assert!(worst < 0.05, "calibrated stream differs by {worst} deg");
}

#[test]
fn calibration_needs_enough_frames() {
    let m = model();
    let src: Vec<_> = (0..5).map(|i| Ok((i as f64, ImuFrame::default()))).collect();
    let opts = StreamOptions {
        calibrate_frames: 10,
        queue_capacity: Some(16),
    };
    assert!(run_stream(&m, src, &opts, |_| Ok(())).is_err());
}

#[test]
fn wire_lines_rebuild_the_frames() {
    let frames = imu(0.5, 7);
    let text: String = frames.iter().enumerate().map(|(i, f)| format_frame(i as f64 / 60.0, f)).collect();
    let mut asm = FrameAssembler::new();
    let mut back = Vec::new();
    for line in text.lines() {
        back.extend(asm.push_line(line).unwrap());
    }
    assert_eq!(back.len(), frames.len());
    for ((_, b), f) in back.iter().zip(&frames) {
        for s in 0..3 {
            assert!((b.sensors[s].acc - f.sensors[s].acc).norm() < 1e-9);
            assert!((b.sensors[s].rot.0 - f.sensors[s].rot.0).abs().max() < 1e-9);
        }
    }
}
