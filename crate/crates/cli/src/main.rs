mod plot;
mod stats;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pf_core::autodiff::checkpoint::read_checkpoint;
use pf_core::config::RunConfig;
use pf_core::data::{DatasetSplit, LabelVocabulary, SplitName};
use pf_core::synth::{embedding_path, generate_dataset, manifest_path, PROMPTS_FILE};
use pf_core::train::{
    metadata_path, model_config, predict_clouds, read_label_file, score, write_label_files, CheckpointMetadata, History, Pretrainer,
    Task, TrainConfig, Trainer, HISTORY_HEADER,
};
use pf_core::ulip::{read_embedding, ClassPrompts};
use pf_core::{Error, PointCloud32, PointNeXt32};

#[derive(Parser)]
#[command(name = "pf", version, about = "Building point cloud part segmentation and classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic building dataset.
    GenData(Common),
    /// Voxel-count and label statistics of a dataset.
    Stats(Common),
    /// Train a model (or pretrain with --task ulip_pretrain).
    Train(Common),
    /// Contrastive pretraining against stored embeddings.
    Pretrain(Common),
    /// Score a checkpoint on a labeled split.
    Eval(CheckpointArgs),
    /// Write per-point predictions for a split.
    Predict(CheckpointArgs),
    /// Render a CSV written by another command as SVG.
    Plot(PlotArgs),
    /// Print the fully resolved configuration.
    EmitConfig(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Starting defaults: default | xl | desk.
    #[arg(long)]
    profile: Option<String>,
    /// `key = value` file applied over the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key, repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "data")]
    data: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long = "voxel-size")]
    voxel_size: Option<String>,
    #[arg(long = "voxel-sizes")]
    voxel_sizes: Option<String>,
    #[arg(long = "sample-size")]
    sample_size: Option<String>,
    #[arg(long)]
    radius: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    /// `scratch` or a checkpoint path.
    #[arg(long)]
    init: Option<String>,
    #[arg(long, value_name = "BOOL")]
    strict: Option<String>,
    #[arg(long, value_name = "BOOL")]
    deterministic: Option<String>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[command(flatten)]
    common: Common,
    /// Defaults to `<out>/best.pfckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// history.csv, zero_shot.csv, voxel_hist_*.csv, part_labels.csv or type_labels.csv.
    input: PathBuf,
    /// Defaults to the input with an .svg extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub(crate) enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

pub(crate) type Outcome = std::result::Result<(), Failure>;

pub(crate) fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

impl Common {
    fn resolve(&self) -> std::result::Result<RunConfig, Failure> {
        let train = TrainConfig::profile(self.profile.as_deref().unwrap_or("default"))?;
        let mut cfg = RunConfig::with_train(train);
        if let Some(p) = &self.config {
            cfg.apply_file(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
        }
        let flags = [
            ("seed", &self.seed),
            ("out", &self.out),
            ("data_dir", &self.data),
            ("split", &self.split),
            ("task", &self.task),
            ("beta", &self.beta),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("voxel_size", &self.voxel_size),
            ("voxel_sizes", &self.voxel_sizes),
            ("sample_size", &self.sample_size),
            ("radius", &self.radius),
            ("preset", &self.preset),
            ("init", &self.init),
            ("strict", &self.strict),
            ("deterministic", &self.deterministic),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn create_dir(p: &Path) -> Outcome {
    std::fs::create_dir_all(p).map_err(|e| runtime(format!("cannot create {}: {e}", p.display())))
}

pub(crate) fn write_file(p: &Path, text: &str) -> Outcome {
    std::fs::write(p, text).map_err(|e| runtime(format!("cannot write {}: {e}", p.display())))
}

pub(crate) fn load_split(cfg: &RunConfig, split: SplitName) -> std::result::Result<Vec<PointCloud32>, Failure> {
    let manifest = manifest_path(&cfg.data_dir, split);
    let clouds = DatasetSplit::read_manifest(split, &manifest)?.load::<f32>()?;
    if clouds.is_empty() {
        return Err(runtime(format!("{} lists no clouds", manifest.display())));
    }
    Ok(clouds)
}

fn gen_data(cfg: &RunConfig) -> Outcome {
    let summary = generate_dataset(&cfg.generator, cfg.counts, &cfg.data_dir, &cfg.dataset)?;
    for split in SplitName::ALL {
        let want = cfg.counts.get(split);
        let got = DatasetSplit::read_manifest(split, &manifest_path(&cfg.data_dir, split))?.load::<f32>()?;
        if got.len() != want {
            return Err(runtime(format!("{} split has {} clouds, expected {want}", split.as_str(), got.len())));
        }
        for c in &got {
            if c.len() != cfg.generator.points_per_building {
                return Err(runtime(format!("{} has {} points", c.name, c.len())));
            }
            if cfg.dataset.embeddings.is_some() {
                read_embedding(&embedding_path(&cfg.data_dir, &c.name))?;
            }
        }
    }
    if cfg.dataset.embeddings.is_some() {
        ClassPrompts::read(&cfg.data_dir.join(PROMPTS_FILE))?;
    }
    println!("generated {} buildings in {}", summary.records.len(), cfg.data_dir.display());
    Ok(())
}

fn check_history(dir: &Path, expect_checkpoint: bool) -> std::result::Result<History, Failure> {
    let history = History::read(&dir.join("history.csv"))?;
    if history.rows.is_empty() {
        return Err(runtime("history.csv has no rows"));
    }
    for name in ["last.pfckpt"].into_iter().chain(expect_checkpoint.then_some("best.pfckpt")) {
        let p = dir.join(name);
        if read_checkpoint(&p)?.is_empty() {
            return Err(runtime(format!("{} holds no tensors", p.display())));
        }
        CheckpointMetadata::read(&metadata_path(&p))?;
    }
    Ok(history)
}

fn train(cfg: &RunConfig) -> Outcome {
    if cfg.train.task == Task::UlipPretrain {
        return pretrain(cfg);
    }
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("config.txt"), &cfg.emit())?;
    let train = load_split(cfg, SplitName::Train)?;
    let val = load_split(cfg, SplitName::Val)?;
    let mut trainer = Trainer::<f32>::new(cfg.train.clone(), &train)?;
    if let Some(r) = &trainer.load_report {
        eprintln!("init: {} loaded, {} skipped, {} missing", r.loaded.len(), r.skipped.len(), r.missing.len());
    }
    let outcome = trainer.fit(&train, &val, Some(&cfg.out))?;
    let history = check_history(&cfg.out, outcome.best.is_some())?;
    if history.rows.len() != outcome.history.rows.len() {
        return Err(runtime("history.csv does not match the run"));
    }
    match (outcome.best, &outcome.best_report) {
        (Some(i), Some(r)) => print!("best epoch {}\n{}", i + 1, r.to_text()),
        _ => println!("no epoch improved the selection metric"),
    }
    println!("{} steps in {:.1}s", outcome.steps, outcome.seconds);
    Ok(())
}

fn pretrain(cfg: &RunConfig) -> Outcome {
    let mut tc = cfg.train.clone();
    tc.task = Task::UlipPretrain;
    create_dir(&cfg.out)?;
    let mut emitted = cfg.clone();
    emitted.train.task = Task::UlipPretrain;
    write_file(&cfg.out.join("config.txt"), &emitted.emit())?;
    let train = load_split(cfg, SplitName::Train)?;
    let val = load_split(cfg, SplitName::Val)?;
    let triplets = train
        .iter()
        .map(|c| read_embedding(&embedding_path(&cfg.data_dir, &c.name)))
        .collect::<pf_core::Result<Vec<_>>>()?;
    let prompts = ClassPrompts::read(&cfg.data_dir.join(PROMPTS_FILE))?;
    let dim = prompts.dim;
    let mut pre = Pretrainer::<f32>::new(tc, dim)?;
    let outcome = pre.fit(&train, &triplets, &val, &prompts, cfg.eval_every, Some(&cfg.out))?;
    let mut csv = String::from("step,zero_shot_accuracy\n");
    for (s, a) in &outcome.zero_shot {
        csv.push_str(&format!("{s},{a}\n"));
    }
    let zs = cfg.out.join("zero_shot.csv");
    write_file(&zs, &csv)?;
    check_history(&cfg.out, outcome.best_checkpoint.is_some())?;
    let back = std::fs::read_to_string(&zs).map_err(|e| runtime(e.to_string()))?;
    if back.lines().count() != outcome.zero_shot.len() + 1 {
        return Err(runtime("zero_shot.csv does not match the run"));
    }
    let (step, acc) = outcome.zero_shot.last().copied().unwrap_or((0, 0.0));
    println!("zero-shot accuracy {acc:.2}% after {step} steps ({:.1}s)", outcome.seconds);
    Ok(())
}

fn load_model(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> std::result::Result<PointNeXt32, Failure> {
    if cfg.train.task == Task::UlipPretrain {
        return Err(Failure::Usage("eval and predict need a classification, segmentation or multitask checkpoint".into()));
    }
    let path = checkpoint.clone().unwrap_or_else(|| cfg.out.join("best.pfckpt"));
    let mut model = PointNeXt32::new(model_config(&cfg.train)?, cfg.train.seed)?;
    model.load_checkpoint(&path, true)?;
    Ok(model)
}

fn eval(args: &CheckpointArgs) -> Outcome {
    let cfg = args.common.resolve()?;
    let model = load_model(&cfg, &args.checkpoint)?;
    let clouds = load_split(&cfg, cfg.split)?;
    let preds = predict_clouds(&model, &clouds, cfg.train.voxel_size, cfg.train.augment.up_axis)?;
    let report = score(&clouds, &preds, cfg.train.part_iou_mode)?;
    create_dir(&cfg.out)?;
    let split = cfg.split.as_str();
    let text = cfg.out.join(format!("eval_{split}.txt"));
    let csv = cfg.out.join(format!("eval_{split}_classes.csv"));
    let vocab = LabelVocabulary::parts();
    let csv_arg = cfg.train.task.uses_part_labels().then_some((csv.as_path(), &vocab));
    report.write(&text, csv_arg)?;
    let back = std::fs::read_to_string(&text).map_err(|e| runtime(e.to_string()))?;
    if pf_core::metrics::EvalReport::parse_text(&back)?.to_text() != report.to_text() {
        return Err(runtime(format!("{} does not round-trip", text.display())));
    }
    print!("{}", report.to_text());
    Ok(())
}

fn predict(args: &CheckpointArgs) -> Outcome {
    let cfg = args.common.resolve()?;
    let model = load_model(&cfg, &args.checkpoint)?;
    let clouds = load_split(&cfg, cfg.split)?;
    let preds = predict_clouds(&model, &clouds, cfg.train.voxel_size, cfg.train.augment.up_axis)?;
    let dir = cfg.out.join("predictions");
    create_dir(&dir)?;
    if cfg.train.task.uses_part_labels() {
        let files = write_label_files(&preds, &dir)?;
        for ((f, c), p) in files.iter().zip(&clouds).zip(&preds) {
            let back = read_label_file(f)?;
            if back.len() != c.len() || Some(&back) != p.part_labels.as_ref() {
                return Err(runtime(format!("{} does not match the prediction", f.display())));
            }
        }
    }
    if cfg.train.task.uses_type_labels() {
        let types = LabelVocabulary::building_types();
        let mut csv = String::from("name,type_label,type_name\n");
        for p in &preds {
            let t = p.type_label.ok_or_else(|| runtime(format!("no type prediction for {}", p.name)))?;
            csv.push_str(&format!("{},{t},{}\n", p.name, types.name(t).unwrap_or("?")));
        }
        let path = dir.join("types.csv");
        write_file(&path, &csv)?;
        let back = std::fs::read_to_string(&path).map_err(|e| runtime(e.to_string()))?;
        if back.lines().count() != preds.len() + 1 {
            return Err(runtime(format!("{} is incomplete", path.display())));
        }
    }
    println!("wrote predictions for {} clouds to {}", preds.len(), dir.display());
    Ok(())
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn num(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

fn plot_cmd(args: &PlotArgs) -> Outcome {
    let text = std::fs::read_to_string(&args.input).map_err(|e| runtime(format!("cannot read {}: {e}", args.input.display())))?;
    let header = text.lines().next().unwrap_or("").trim();
    let title = args.input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let rows = parse_csv(&text);
    let svg = match header {
        HISTORY_HEADER => {
            let history = History::parse_csv(&text, &args.input)?;
            let mut series = Vec::new();
            let cols: [(&str, fn(&pf_core::train::HistoryRow) -> Option<f64>); 3] = [
                ("val accuracy", |r| r.val_acc),
                ("val part IoU", |r| r.val_piou),
                ("harmonic mean", |r| r.harmonic),
            ];
            for (name, f) in cols {
                let pts: Vec<(f64, f64)> = history.rows.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect();
                if !pts.is_empty() {
                    series.push(plot::Series { name: name.into(), points: pts });
                }
            }
            if series.is_empty() {
                series.push(plot::Series {
                    name: "train loss".into(),
                    points: history.rows.iter().map(|r| (r.epoch as f64, r.train_loss)).collect(),
                });
            }
            plot::line_chart(&title, "epoch", "metric", &series, &text)
        }
        "step,zero_shot_accuracy" => {
            let pts = rows.iter().filter_map(|r| Some((num(r.first()?)?, num(r.get(1)?)?))).collect();
            plot::line_chart(&title, "step", "zero-shot accuracy (%)", &[plot::Series { name: "zero-shot".into(), points: pts }], &text)
        }
        "bin_lo,bin_hi,count" => {
            let bars: Vec<(String, f64)> =
                rows.iter().filter_map(|r| Some((format!("{}-{}", r.first()?, r.get(1)?), num(r.get(2)?)?))).collect();
            plot::bar_chart(&title, "clouds", &bars, &text)
        }
        "label,name,count" => {
            let bars: Vec<(String, f64)> = rows.iter().filter_map(|r| Some((r.get(1)?.clone(), num(r.get(2)?)?))).collect();
            plot::bar_chart(&title, "count", &bars, &text)
        }
        other => return Err(Failure::Usage(format!("{}: unrecognized CSV header {other:?}", args.input.display()))),
    };
    let out = args.out.clone().unwrap_or_else(|| args.input.with_extension("svg"));
    write_file(&out, &svg)?;
    let back = std::fs::read_to_string(&out).map_err(|e| runtime(e.to_string()))?;
    if !plot::looks_like_svg(&back) {
        return Err(runtime(format!("{} is not a complete SVG", out.display())));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenData(c) => gen_data(&c.resolve()?),
        Command::Stats(c) => stats::run(&c.resolve()?),
        Command::Train(c) => train(&c.resolve()?),
        Command::Pretrain(c) => pretrain(&c.resolve()?),
        Command::Eval(a) => eval(&a),
        Command::Predict(a) => predict(&a),
        Command::Plot(a) => plot_cmd(&a),
        Command::EmitConfig(c) => {
            print!("{}", c.resolve()?.emit());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("PF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
