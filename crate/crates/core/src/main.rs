use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use progip::datasets::{
    build_splits, load_canonical, resample, resolve_data_path, save_canonical, scripted, Catalog, MotionSequence,
    SplitProtocol, SplitRole,
};
use progip::imusynth::{synthesize_imu, SensorPlacement, SynthOptions, DEFAULT_ACC_SCALE};
use progip::metrics::{evaluate_model, per_motion_report, EvalReport, JointMask};
use progip::progressive::ProgIpModel;
use progip::runtime::{
    read_jsonl, run_stream, write_bvh, write_jsonl, write_jsonl_record, ExportFormat, FrameAssembler, PoseRecord,
    StreamOptions,
};
use progip::skeleton::SkeletonModel;
use progip::training::{
    fine_tune, fit, prepare_measured, prepare_synthetic, Control, Preset, SequenceData, TrainEvent, TrainManifest,
};
use progip::{ProgipError, Result};

/// Full-body pose estimation from head and wrist IMUs.
#[derive(Parser, Debug)]
#[command(name = "progip", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Model bundle directory
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Skeleton asset JSON (defaults to the bundled SMPL asset)
    #[arg(long, global = true)]
    skeleton: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 60.0)]
    hz: f64,
    /// Window length M
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Supervised frame N within the window (1-based)
    #[arg(long, global = true)]
    supervise_frame: Option<usize>,
    #[arg(long, global = true, default_value_t = DEFAULT_ACC_SCALE)]
    acc_scale: f64,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Preset {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize IMU readings for motion directories, or generate scripted motion
    Synth(SynthArgs),
    /// Train all five networks from a manifest
    Train(TrainArgs),
    /// Continue training a model on measured-IMU sequences
    Finetune(TrainArgs),
    /// Score a model and write an evaluation CSV
    Eval(EvalArgs),
    /// Run live inference on wire-format frames from stdin or UDP; poses go to stdout as JSONL
    Stream(StreamArgs),
    /// Convert a JSONL pose stream to BVH or JSONL
    Export(ExportArgs),
    /// Dataset utilities
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Canonical motion directories
    inputs: Vec<PathBuf>,
    /// Output directory (one subdirectory per input when several are given)
    #[arg(long)]
    out: PathBuf,
    /// Generate this scripted motion instead of reading inputs
    #[arg(long, value_enum)]
    scripted: Option<ScriptedKind>,
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    /// Include gravity in the synthesized specific force
    #[arg(long)]
    gravity: bool,
    /// Replace an existing IMU channel
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScriptedKind {
    Mixed,
    Walk,
    Squat,
    Wave,
    Reach,
    Turn,
    Idle,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training manifest JSON
    manifest: PathBuf,
    /// Print a progress line every this many steps
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Canonical sequence directories
    inputs: Vec<PathBuf>,
    /// Catalog to take sequences from
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Where the IMU features come from
    #[arg(long, value_enum, default_value_t = ImuSource::Auto)]
    imu: ImuSource,
    #[arg(long, value_enum, default_value_t = MaskArg::All)]
    joints: MaskArg,
    /// CSV destination (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-motion means to this CSV
    #[arg(long)]
    per_motion: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum ImuSource {
    /// Measured when the sequence has an IMU channel, synthesized otherwise
    Auto,
    Synthetic,
    Measured,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaskArg {
    All,
    Upper,
}

#[derive(Args, Debug)]
struct StreamArgs {
    /// Listen for datagrams on this address instead of reading stdin
    #[arg(long)]
    udp: Option<String>,
    /// Use the first K frames (user in T-pose) for calibration
    #[arg(long, default_value_t = 0)]
    calibrate: usize,
    /// Ingestion queue length (default 2 M)
    #[arg(long)]
    queue: Option<usize>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// JSONL pose stream as written by `stream`
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportFormat::Bvh)]
    format: ExportFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum DataCommand {
    /// Check canonical sequence directories
    Validate { dirs: Vec<PathBuf> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(ProgipError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => synth(g, a),
        Command::Train(a) => train(g, a, false),
        Command::Finetune(a) => train(g, a, true),
        Command::Eval(a) => eval(g, a),
        Command::Stream(a) => stream(g, a),
        Command::Export(a) => export(g, a),
        Command::Data {
            command: DataCommand::Validate { dirs },
        } => validate(dirs),
    }
}

fn skeleton(g: &Global) -> Result<Option<SkeletonModel>> {
    g.skeleton.as_deref().map(SkeletonModel::load).transpose()
}

fn skeleton_or_default(g: &Global) -> Result<SkeletonModel> {
    Ok(skeleton(g)?.unwrap_or_else(SkeletonModel::smpl_default))
}

fn load_model(g: &Global) -> Result<ProgIpModel> {
    let dir = g
        .model
        .as_deref()
        .ok_or_else(|| ProgipError::Usage("--model <dir> is required".into()))?;
    let model = ProgIpModel::load(&resolve_data_path(dir), skeleton(g)?)?;
    for (flag, given, actual) in [
        ("--window", g.window, model.window),
        ("--supervise-frame", g.supervise_frame, model.supervise_frame),
    ] {
        if given.is_some_and(|v| v != actual) {
            return Err(ProgipError::Usage(format!("{flag} differs from the model's value {actual}")));
        }
    }
    Ok(model)
}

fn load_sequence(dir: &Path, hz: f64) -> Result<MotionSequence> {
    let seq = load_canonical(&resolve_data_path(dir))?;
    Ok(if seq.framerate == hz { seq } else { resample(&seq, hz) })
}

fn synth(g: &Global, a: &SynthArgs) -> Result<()> {
    let skel = skeleton_or_default(g)?;
    let opts = SynthOptions {
        add_gravity: a.gravity,
        ..SynthOptions::default()
    };
    let placement = SensorPlacement::head_and_wrists(&skel)?;
    let with_imu = |mut seq: MotionSequence| -> Result<MotionSequence> {
        let imu = synthesize_imu(&skel, &seq.full_poses(), &placement, seq.dt(), &opts)?;
        seq.set_imu_frames(&imu);
        Ok(seq)
    };
    if let Some(kind) = a.scripted {
        if !a.inputs.is_empty() {
            return Err(ProgipError::Usage("--scripted takes no input directories".into()));
        }
        let seed = g.seed.unwrap_or(10);
        let seq = match kind {
            ScriptedKind::Mixed => scripted::mixed(&skel, a.seconds, g.hz, seed),
            k => {
                use scripted::MotionKind as K;
                let kind = match k {
                    ScriptedKind::Walk => K::Walk,
                    ScriptedKind::Squat => K::Squat,
                    ScriptedKind::Wave => K::Wave,
                    ScriptedKind::Reach => K::Reach,
                    ScriptedKind::Turn => K::Turn,
                    _ => K::Idle,
                };
                scripted::clip(&skel, kind, a.seconds, g.hz, seed)
            }
        };
        save_canonical(&with_imu(seq)?, &a.out)?;
        eprintln!("wrote {}", a.out.display());
        return Ok(());
    }
    if a.inputs.is_empty() {
        return Err(ProgipError::Usage("give motion directories or --scripted".into()));
    }
    for input in &a.inputs {
        let seq = load_sequence(input, g.hz)?;
        if seq.imu.is_some() && !a.force {
            return Err(ProgipError::Usage(format!(
                "{} already has an IMU channel; pass --force to replace it",
                input.display()
            )));
        }
        let out = if a.inputs.len() == 1 {
            a.out.clone()
        } else {
            a.out.join(input.file_name().unwrap_or(input.as_os_str()))
        };
        save_canonical(&with_imu(seq)?, &out)?;
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn prepare(model_like: (&SkeletonModel, f64), seqs: &[MotionSequence], imu: ImuSource) -> Result<Vec<SequenceData>> {
    let (skel, acc_scale) = model_like;
    let placement = SensorPlacement::head_and_wrists(skel)?;
    seqs.iter()
        .map(|s| {
            let measured = match imu {
                ImuSource::Auto => s.imu.is_some(),
                ImuSource::Measured => true,
                ImuSource::Synthetic => false,
            };
            if measured {
                prepare_measured(s, skel, acc_scale)
            } else {
                prepare_synthetic(s, skel, &placement, acc_scale, &SynthOptions::default())
            }
        })
        .collect()
}

fn train(g: &Global, a: &TrainArgs, finetune: bool) -> Result<()> {
    let manifest = TrainManifest::load(&a.manifest)?;
    let mut manifest_for_cfg = manifest.clone();
    if let Some(p) = g.preset {
        manifest_for_cfg.preset = p.into();
    }
    let mut cfg = manifest_for_cfg.train_config()?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.window {
        cfg.window = w;
    }
    if let Some(n) = g.supervise_frame {
        cfg.supervise_frame = n;
    }
    cfg.validate().map_err(|e| ProgipError::Usage(e.to_string()))?;

    let init = manifest.init.clone().or_else(|| g.model.clone());
    let model = match &init {
        Some(dir) => {
            let m = ProgIpModel::load(dir, skeleton(g)?)?;
            if (m.window, m.supervise_frame) != (cfg.window, cfg.supervise_frame) {
                return Err(ProgipError::Usage(format!(
                    "model window ({}, {}) differs from the training window ({}, {})",
                    m.window, m.supervise_frame, cfg.window, cfg.supervise_frame
                )));
            }
            m
        }
        None if finetune => {
            return Err(ProgipError::Usage(
                "finetune needs a pretrained model: set \"init\" in the manifest or pass --model".into(),
            ))
        }
        None => {
            let mut m = ProgIpModel::new(manifest_for_cfg.widths()?, skeleton_or_default(g)?, cfg.seed)?;
            m.acc_scale = g.acc_scale;
            m.window = cfg.window;
            m.supervise_frame = cfg.supervise_frame;
            m
        }
    };
    let seqs = manifest.sequences(&model.skeleton, g.hz)?;
    let imu = if finetune { ImuSource::Measured } else { ImuSource::Synthetic };
    let data = prepare((&model.skeleton, model.acc_scale), &seqs, imu)?;
    eprintln!(
        "training on {} sequences ({} frames), {} parameters",
        data.len(),
        data.iter().map(|d| d.len()).sum::<usize>(),
        progip::progressive::StageId::ALL.iter().map(|&id| model.net(id).num_params()).sum::<usize>()
    );

    let out = manifest.output.clone();
    let every = manifest.checkpoint_every;
    let log_every = a.log_every.max(1);
    let on_event = |ev: TrainEvent| -> Result<Control> {
        match ev {
            TrainEvent::Step { step, epoch, report, .. } if step % log_every == 0 => {
                let s = &report.stages;
                eprintln!(
                    "epoch {epoch} step {step} loss {:.5} (global {:.4} s1 {:.4} s2 {:.4} s3 {:.4} s4 {:.4})",
                    report.total, s[0].total, s[1].total, s[2].total, s[3].total, s[4].total
                );
            }
            TrainEvent::EpochEnd { epoch, model } if every.is_some_and(|k| k > 0 && (epoch + 1) % k == 0) => {
                model.save(&out)?;
            }
            _ => {}
        }
        Ok(Control::Continue)
    };
    let (model, history) = if finetune {
        fine_tune(model, &data, &cfg, on_event)?
    } else {
        let mut model = model;
        let h = fit(&mut model, &data, &cfg, on_event)?;
        (model, h)
    };
    model.save(&out)?;
    fs::write(out.join("history.json"), serde_json::to_string(&history)?)?;
    eprintln!(
        "saved {} after {} steps, final loss {:.5}",
        out.display(),
        history.losses.len(),
        history.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let model = load_model(g)?;
    let mut dirs: Vec<PathBuf> = a.inputs.clone();
    if let Some(cat) = &a.catalog {
        let catalog = Catalog::load(&resolve_data_path(cat))?;
        let splits = build_splits(&catalog, &SplitProtocol::default())?;
        let role = match a.split {
            SplitArg::Train => SplitRole::Train,
            SplitArg::Val => SplitRole::Val,
            SplitArg::Test => SplitRole::Test,
        };
        dirs.extend(splits.role(role).iter().map(|e| e.path.clone()));
    }
    if dirs.is_empty() {
        return Err(ProgipError::Usage("nothing to evaluate: give directories or --catalog".into()));
    }
    let mask = match a.joints {
        MaskArg::All => JointMask::all(),
        MaskArg::Upper => JointMask::upper_body(&model.skeleton),
    };
    let mut report = EvalReport::default();
    for dir in &dirs {
        let seq = load_sequence(dir, g.hz)?;
        let data = prepare((&model.skeleton, model.acc_scale), std::slice::from_ref(&seq), a.imu)?;
        let errors = evaluate_model(&model, &data[0], &mask)?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        report.push(&name, &seq.label, errors);
    }
    eprint!("{}", report.to_table());
    match &a.out {
        Some(p) => fs::write(p, report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    if let Some(p) = &a.per_motion {
        fs::write(p, per_motion_report(&report.frame_errors).to_csv())?;
    }
    Ok(())
}

fn stream(g: &Global, a: &StreamArgs) -> Result<()> {
    let model = load_model(g)?;
    let opts = StreamOptions {
        calibrate_frames: a.calibrate,
        queue_capacity: a.queue,
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let sink = |e: &progip::runtime::Emitted| {
        write_jsonl_record(
            &mut out,
            &PoseRecord {
                frame: e.frame,
                t: e.t,
                pose: e.pose.clone(),
            },
        )?;
        out.flush()?;
        Ok(())
    };
    let summary = match &a.udp {
        Some(addr) => {
            let socket = UdpSocket::bind(addr)?;
            eprintln!("listening on {}", socket.local_addr()?);
            run_stream(&model, udp_frames(socket), &opts, sink)?
        }
        None => run_stream(&model, line_frames(stdin_lines()), &opts, sink)?,
    };
    let t = &summary.timing;
    eprintln!(
        "frames {} emitted {} dropped {} inference median {:.0} us p95 {:.0} us",
        summary.frames,
        summary.emitted,
        t.dropped,
        t.median_us().unwrap_or(0.0),
        t.percentile_us(95.0).unwrap_or(0.0)
    );
    Ok(())
}

fn stdin_lines() -> impl Iterator<Item = io::Result<String>> + Send {
    let stdin = io::stdin();
    std::iter::from_fn(move || {
        let mut line = String::new();
        match stdin.read_line(&mut line) {
            Ok(0) => None,
            Ok(_) => Some(Ok(line)),
            Err(e) => Some(Err(e)),
        }
    })
}

fn line_frames(
    lines: impl Iterator<Item = io::Result<String>> + Send,
) -> impl Iterator<Item = Result<(f64, progip::imusynth::ImuFrame)>> + Send {
    let mut asm = FrameAssembler::new();
    lines.filter_map(move |line| match line {
        Ok(l) => asm.push_line(&l).transpose(),
        Err(e) => Some(Err(e.into())),
    })
}

fn udp_frames(socket: UdpSocket) -> impl Iterator<Item = Result<(f64, progip::imusynth::ImuFrame)>> + Send {
    let mut asm = FrameAssembler::new();
    let mut buf = vec![0u8; 65536];
    let mut ready: std::collections::VecDeque<Result<(f64, progip::imusynth::ImuFrame)>> = Default::default();
    std::iter::from_fn(move || loop {
        if let Some(item) = ready.pop_front() {
            return Some(item);
        }
        let n = match socket.recv(&mut buf) {
            Ok(n) => n,
            Err(e) => return Some(Err(e.into())),
        };
        for line in String::from_utf8_lossy(&buf[..n]).lines() {
            if let Some(item) = asm.push_line(line).transpose() {
                ready.push_back(item);
            }
        }
    })
}

fn export(g: &Global, a: &ExportArgs) -> Result<()> {
    let records = read_jsonl(io::BufReader::new(fs::File::open(&a.input)?))?;
    if records.is_empty() {
        return Err(ProgipError::Usage(format!("{} holds no poses", a.input.display())));
    }
    let mut out = BufWriter::new(fs::File::create(&a.out)?);
    match a.format {
        ExportFormat::Bvh => write_bvh(&mut out, &skeleton_or_default(g)?, &records, g.hz)?,
        ExportFormat::Jsonl => write_jsonl(&mut out, &records)?,
    }
    out.flush()?;
    Ok(())
}

fn validate(dirs: &[PathBuf]) -> Result<()> {
    if dirs.is_empty() {
        return Err(ProgipError::Usage("give at least one directory".into()));
    }
    let mut failed = 0;
    for d in dirs {
        match load_canonical(&resolve_data_path(d)) {
            Ok(seq) => println!(
                "ok {}: {} frames at {} Hz, subject {}, label {}, imu {}",
                d.display(),
                seq.n_frames(),
                seq.framerate,
                seq.subject,
                seq.label,
                if seq.imu.is_some() { "yes" } else { "no" }
            ),
            Err(e) => {
                failed += 1;
                println!("invalid {}: {e}", d.display());
            }
        }
    }
    if failed > 0 {
        return Err(ProgipError::Config(format!("{failed} of {} directories invalid", dirs.len())));
    }
    Ok(())
}
