//! Acceptance criteria, one printed line each. Runs with a plain `main` so the
//! lines show up in `cargo test` output; any failing criterion fails the target.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use progip::backbone::{gradient_check, Backbone, BackboneConfig, Widths};
use progip::datasets::scripted;
use progip::imusynth::{build_input, synthesize_imu, SensorPlacement, SynthOptions};
use progip::metrics::{
    evaluate_model, frame_errors, mjpe, mjpe_positions, mjpe_wrist, mjre, mjre_pelvis, rest_pose_baseline, JointMask,
    MetricStats,
};
use progip::progressive::{ProgIpModel, StageId};
use progip::rotmath::{geodesic_angle_deg, rot_to_6d, six_d_to_rot, Rot6D, RotMatrix};
use progip::runtime::StreamState;
use progip::skeleton::{forward_kinematics, FullPose, SkeletonModel, NUM_JOINTS};
use progip::training::{fit, prepare_synthetic, synthetic_corpus, Control, Preset, SequenceData, SyntheticSpec, TrainEvent};

const HZ: f64 = 60.0;

enum Verdict {
    Pass(String),
    Fail(String),
    /// Measured and printed but not required to pass.
    Report(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn random_rot(rng: &mut ChaCha8Rng) -> RotMatrix {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    RotMatrix(*Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix())
}

fn random_pose(rng: &mut ChaCha8Rng) -> FullPose {
    FullPose((0..NUM_JOINTS).map(|_| random_rot(rng)).collect())
}

fn rotation_suite() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut round_trip, mut ortho, mut symmetry) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let r = random_rot(&mut rng);
        let back = six_d_to_rot(&rot_to_6d(&r)).unwrap();
        round_trip = round_trip.max((back.0 - r.0).abs().max());

        let v = Rot6D(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
        let m = six_d_to_rot(&v).unwrap().0;
        ortho = ortho
            .max((m.transpose() * m - Matrix3::identity()).abs().max())
            .max((m.determinant() - 1.0).abs());

        let s = random_rot(&mut rng);
        let d = (geodesic_angle_deg(&r, &s) - geodesic_angle_deg(&s, &r)).abs().to_radians();
        symmetry = symmetry.max(d);
    }
    let secs = start.elapsed().as_secs_f64();
    let tol = 1e-9;
    check(
        round_trip <= tol && ortho <= tol && symmetry <= tol && secs < 5.0,
        format!("10^4 cases: round-trip {round_trip:.1e}, orthonormality {ortho:.1e}, symmetry {symmetry:.1e} (tol 1e-9), {secs:.2} s (limit 5 s)"),
    )
}

/// Global rotations and positions by walking the tree from the root.
fn fk_oracle(skel: &SkeletonModel, pose: &FullPose) -> Vec<Vector3<f64>> {
    fn visit(
        skel: &SkeletonModel,
        pose: &FullPose,
        j: usize,
        parent_rot: Matrix3<f64>,
        parent_pos: Vector3<f64>,
        out: &mut Vec<Vector3<f64>>,
    ) {
        let pos = if skel.parents()[j].is_some() {
            parent_pos + parent_rot * skel.offsets()[j]
        } else {
            Vector3::zeros()
        };
        let rot = parent_rot * pose.0[j].0;
        out[j] = pos;
        for c in (0..NUM_JOINTS).filter(|&c| skel.parents()[c] == Some(j)) {
            visit(skel, pose, c, rot, pos, out);
        }
    }
    let mut out = vec![Vector3::zeros(); NUM_JOINTS];
    visit(skel, pose, 0, Matrix3::identity(), Vector3::zeros(), &mut out);
    out
}

fn fk_oracle_equivalence() -> Verdict {
    let skel = SkeletonModel::smpl_default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut pos_err, mut bone_err) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let pose = random_pose(&mut rng);
        let fk = forward_kinematics(&skel, &pose);
        let oracle = fk_oracle(&skel, &pose);
        for j in 0..NUM_JOINTS {
            pos_err = pos_err.max((fk.positions[j] - oracle[j]).norm());
            if let Some(p) = skel.parents()[j] {
                let len = (fk.positions[j] - fk.positions[p]).norm();
                bone_err = bone_err.max((len - skel.offsets()[j].norm()).abs());
            }
        }
    }
    check(
        pos_err <= 1e-9 && bone_err <= 1e-9,
        format!("500 poses: max position error {pos_err:.1e} m, max bone-length change {bone_err:.1e} m (tol 1e-9)"),
    )
}

fn gradient_check_criterion() -> Verdict {
    let start = Instant::now();
    let widths = Widths {
        d_model: 8,
        heads: 2,
        ff_dim: 16,
        tf_layers: 1,
        rnn_layers: 1,
        rnn_width: 4,
        decoder_hidden: 8,
        ..Widths::desk()
    };
    let mut worst = (String::new(), 0.0f64);
    let mut tensors = 0;
    for pelvis_head in [false, true] {
        let out_dim = if pelvis_head { 8 } else { 2 };
        let net = Backbone::<f64>::new(BackboneConfig::new(4, out_dim, pelvis_head, widths), 5).unwrap();
        let report = gradient_check(&net, 3, 11, 1e-4).unwrap();
        tensors += report.tensors.len();
        for t in &report.tensors {
            if t.rel_err > worst.1 {
                worst = (t.name.clone(), t.rel_err);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst.1 <= 1e-4 && secs < 120.0,
        format!(
            "{tensors} tensors (in 4, d_model 8, M 3, ε 1e-4): worst {} at {:.1e} (tol 1e-4), {secs:.1} s (limit 120 s)",
            worst.0, worst.1
        ),
    )
}

fn dimension_audit(paper: &ProgIpModel) -> Verdict {
    let expected = [(45, 96), (141, 24), (165, 42), (183, 72), (147, 24)];
    let mut lines = Vec::new();
    let mut ok = true;
    let x = vec![0.1f32; 40 * 45];
    let outputs = paper.run_pipeline(&x, 40).unwrap();
    for (id, (i, o)) in StageId::ALL.into_iter().zip(expected) {
        let cfg = paper.net(id).config();
        let emitted = outputs[id.index()].len() / 40;
        ok &= cfg.in_dim == i && cfg.out_dim == o && emitted == o && id.in_dim() == i && id.out_dim() == o;
        lines.push(format!("{}({}→{})", id.name(), cfg.in_dim, emitted));
    }
    assert!(ok, "stage dimensions differ: {}", lines.join(" "));
    check(ok, format!("paper-size stages, M 40: {}", lines.join(" ")))
}

fn clip_data(skel: &SkeletonModel, seq: &progip::datasets::MotionSequence) -> SequenceData {
    let place = SensorPlacement::head_and_wrists(skel).unwrap();
    prepare_synthetic(seq, skel, &place, 30.0, &SynthOptions::default()).unwrap()
}

fn overfit() -> Verdict {
    let start = Instant::now();
    let skel = SkeletonModel::smpl_default();
    let seq = scripted::mixed(&skel, 500.0 / HZ, HZ, 7);
    let data = [clip_data(&skel, &seq)];
    assert_eq!(data[0].len(), 500);
    let mut model = ProgIpModel::new(Preset::Desk.widths(), skel, 10).unwrap();
    let cfg = progip::training::TrainConfig {
        epochs: usize::MAX,
        max_steps: Some(2000),
        ..Preset::Desk.train_config()
    };
    let mut last = MetricStats::default();
    let history = fit(&mut model, &data, &cfg, |ev| {
        if let TrainEvent::Step { step, model, .. } = ev {
            if step >= 400 && step % 100 == 0 {
                last = MetricStats::over_frames(&evaluate_model(model, &data[0], &JointMask::all())?);
                if last.mjre_deg.mean <= 3.0 && last.mjpe_cm.mean <= 2.0 {
                    return Ok(Control::Stop);
                }
            }
        }
        Ok(Control::Continue)
    })
    .unwrap();
    let steps = history.losses.len();
    let stats = MetricStats::over_frames(&evaluate_model(&model, &data[0], &JointMask::all()).unwrap());
    let (r, p) = (stats.mjre_deg.mean, stats.mjpe_cm.mean);
    let secs = start.elapsed().as_secs_f64();
    check(
        steps <= 2000 && r <= 3.0 && p <= 2.0 && secs <= 1800.0,
        format!("500-frame clip, desk preset, {steps} steps: MJRE {r:.2}° (≤ 3), MJPE {p:.2} cm (≤ 2), {secs:.0} s (limit 1800 s)"),
    )
}

fn generalization() -> Verdict {
    let start = Instant::now();
    let skel = SkeletonModel::smpl_default();
    let spec = SyntheticSpec {
        seconds: 600.0,
        clip_seconds: 60.0,
        seed: 100,
    };
    let train: Vec<SequenceData> = synthetic_corpus(&skel, &spec, HZ).iter().map(|s| clip_data(&skel, s)).collect();
    let minutes = train.iter().map(|d| d.len()).sum::<usize>() as f64 / HZ / 60.0;
    let held_out = clip_data(&skel, &scripted::mixed(&skel, 30.0, HZ, 9_999));

    let mask = JointMask::all();
    let baseline = MetricStats::over_frames(&rest_pose_baseline(&skel, &held_out, 40, 30, &mask).unwrap()).mjpe_cm.mean;
    let mut model = ProgIpModel::new(Preset::Desk.widths(), skel, 10).unwrap();
    let cfg = progip::training::TrainConfig {
        max_steps: Some(GENERALIZATION_STEPS),
        ..Preset::Desk.train_config()
    };
    fit(&mut model, &train, &cfg, |_| Ok(Control::Continue)).unwrap();
    let trained = MetricStats::over_frames(&evaluate_model(&model, &held_out, &mask).unwrap()).mjpe_cm.mean;
    let gain = 1.0 - trained / baseline;
    check(
        minutes >= 10.0 && gain >= 0.30,
        format!(
            "{minutes:.1} min scripted motion, {GENERALIZATION_STEPS} steps; held-out MJPE {trained:.2} cm vs rest pose {baseline:.2} cm: {:.0}% better (need ≥ 30%), {:.0} s",
            gain * 100.0,
            start.elapsed().as_secs_f64()
        ),
    )
}

const GENERALIZATION_STEPS: usize = 1500;

fn streaming_equivalence() -> Verdict {
    let skel = SkeletonModel::smpl_default();
    let model = ProgIpModel::new(Preset::Desk.widths(), skel.clone(), 10).unwrap();
    let seq = scripted::mixed(&skel, 1000.0 / HZ, HZ, 31);
    let place = SensorPlacement::head_and_wrists(&skel).unwrap();
    let imu = synthesize_imu(&skel, &seq.full_poses(), &place, seq.dt(), &SynthOptions::default()).unwrap();
    assert_eq!(imu.len(), 1000);
    let batch = model.predict_sequence(&build_input(&imu, model.acc_scale)).unwrap();

    let mut state = StreamState::new(&model);
    let mut identical = true;
    let mut lags = std::collections::BTreeSet::new();
    let mut emitted = 0;
    for (i, frame) in imu.iter().enumerate() {
        let t = i as f64 / HZ;
        if let Some(e) = state.stream_step(&model, t, frame).unwrap() {
            let (bf, bp) = &batch[emitted];
            identical &= e.frame as usize == *bf && e.pose == *bp;
            lags.insert(i as u64 - e.frame);
            emitted += 1;
        }
    }
    let lag_frames = lags.iter().next().copied().unwrap_or(0);
    let lag_ms = lag_frames as f64 / HZ * 1000.0;
    check(
        identical && emitted == batch.len() && lags.len() == 1 && lag_frames == 10,
        format!(
            "1000-frame clip: {emitted} poses, bit-identical {identical}, lag {lag_frames} frames = {lag_ms:.1} ms at 60 Hz"
        ),
    )
}

fn realtime_budget(paper: &ProgIpModel) -> Verdict {
    let skel = &paper.skeleton;
    let seq = scripted::mixed(skel, 70.0 / HZ, HZ, 3);
    let place = SensorPlacement::head_and_wrists(skel).unwrap();
    let imu = synthesize_imu(skel, &seq.full_poses(), &place, seq.dt(), &SynthOptions::default()).unwrap();
    let mut state = StreamState::new(paper);
    for (i, f) in imu.iter().enumerate() {
        state.stream_step(paper, i as f64 / HZ, f).unwrap();
    }
    let median_ms = state.timing.median_us().unwrap() / 1000.0;
    let params: usize = StageId::ALL.iter().map(|&id| paper.net(id).num_params()).sum();
    let detail = format!(
        "paper-size pipeline ({:.1}M params, d_model 256), {} frames on {} thread(s): median {median_ms:.1} ms per frame (budget 16.6 ms) {}",
        params as f64 / 1e6,
        state.timing.inference_us.len(),
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        if median_ms <= 16.6 { "within budget" } else { "over budget" }
    );
    Verdict::Report(detail)
}

fn metric_sanity() -> Verdict {
    let skel = SkeletonModel::smpl_default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut zero = 0.0f64;
    let mut translation = 0.0f64;
    let mut gauge = 0.0f64;
    for _ in 0..200 {
        let a: Vec<FullPose> = (0..3).map(|_| random_pose(&mut rng)).collect();
        let b: Vec<FullPose> = (0..3).map(|_| random_pose(&mut rng)).collect();
        for v in [mjre(&a, &a, &skel), mjre_pelvis(&a, &a, &skel), mjpe(&a, &a, &skel), mjpe_wrist(&a, &a, &skel)] {
            zero = zero.max(v.unwrap().abs());
        }

        let fa = forward_kinematics(&skel, &a[0]).positions;
        let fb = forward_kinematics(&skel, &b[0]).positions;
        let shift = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let moved: Vec<Vector3<f64>> = fa.iter().map(|p| p + shift).collect();
        let joints: Vec<usize> = (0..NUM_JOINTS).collect();
        translation = translation.max((mjpe_positions(&moved, &fb, &joints, 0) - mjpe_positions(&fa, &fb, &joints, 0)).abs());

        let q = random_rot(&mut rng);
        let turn = |poses: &[FullPose]| -> Vec<FullPose> {
            poses
                .iter()
                .map(|p| {
                    let mut p = p.clone();
                    p.0[0] = q.mul(&p.0[0]);
                    p
                })
                .collect()
        };
        let before = frame_errors(&a, &b, &skel, &JointMask::all()).unwrap();
        let after = frame_errors(&turn(&a), &turn(&b), &skel, &JointMask::all()).unwrap();
        for (x, y) in before.iter().zip(&after) {
            gauge = gauge.max((x.mjre_deg - y.mjre_deg).abs()).max((x.mjpe_cm - y.mjpe_cm).abs());
        }
    }
    check(
        zero <= 1e-6 && translation <= 1e-9 && gauge <= 1e-6,
        format!("200 random cases: identical-input max {zero:.1e}, translation shift {translation:.1e}, pelvis-gauge shift {gauge:.1e}"),
    )
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    println!("acceptance criteria");
    let paper_start = Instant::now();
    let paper = ProgIpModel::new(Preset::Paper.widths(), SkeletonModel::smpl_default(), 10).unwrap();
    let paper_init = paper_start.elapsed();

    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("rotation suite", Box::new(rotation_suite)),
        ("FK oracle equivalence", Box::new(fk_oracle_equivalence)),
        ("gradient check", Box::new(gradient_check_criterion)),
        ("dimension audit", Box::new(|| dimension_audit(&paper))),
        ("overfit", Box::new(overfit)),
        ("generalization smoke", Box::new(generalization)),
        ("streaming equivalence", Box::new(streaming_equivalence)),
        ("real-time budget", Box::new(|| realtime_budget(&paper))),
        ("metric sanity", Box::new(metric_sanity)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let took = fmt_duration(start.elapsed());
        match verdict {
            Verdict::Pass(d) => println!("PASS   {name}: {d} [{took}]"),
            Verdict::Report(d) => println!("REPORT {name}: {d} [{took}]"),
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL   {name}: {d} [{took}]");
            }
        }
    }
    println!("paper-size model construction took {}", fmt_duration(paper_init));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}
