//! Command-line entry point: `gen`, `train`, `eval`, `viz`, `gradcheck`
//! and `ablate`.
//!
//! Every subcommand writes `run.json` into its output directory with the
//! exact argument vector, the resolved configuration and crate versions.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::engine::{
    finetune_fewshot, load_checkpoint, make_image_sample, save_checkpoint, train, with_thread_pool, SupervisionMode,
    TrainConfig, TrainOptions, FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::evalviz::{emit_heatmaps, evaluate, evaluate_ground_truth, run_ablation};
use crate::losses::{batch_objective, gradient_check, relu_pattern, LossWeights, GRADCHECK_TOL};
use crate::net::{ModelParams, NormalizeMode};
use crate::shapesdata::{generate_dataset, generate_samples, load_dataset, GenConfig, ImageSplit, ShapeKind};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Parser, Serialize)]
#[command(name = "cpmask", version, about = "Partially supervised mask branch experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic shapes dataset.
    Gen(GenArgs),
    /// Train the mask branch.
    Train(TrainArgs),
    /// Oracle-box mask AP of a checkpoint.
    Eval(EvalArgs),
    /// Boundary, affinity and mask heatmaps for one image.
    Viz(VizArgs),
    /// Finite-difference check of every loss pathway.
    Gradcheck(GradcheckArgs),
    /// Novel-set AP of the four module-flag variants.
    Ablate(AblateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub num_train: usize,
    #[arg(long, default_value_t = 300)]
    pub num_val: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated shape names.
    #[arg(long, default_value = "square,circle,triangle")]
    pub base_cats: String,
    #[arg(long, default_value = "pentagon,star,ellipse")]
    pub novel_cats: String,
    /// Image side in pixels.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// key=value config file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `supervision_mode` from the config.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SupervisionMode>,
    /// Overrides `shots` from the config.
    #[arg(long)]
    pub shots: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "gt_as_prediction")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value = "val", value_parser = parse_split)]
    pub split: ImageSplit,
    /// Report path; `run.json` goes next to it.
    #[arg(long)]
    pub report: PathBuf,
    /// Score the ground-truth masks instead of a model (sanity check).
    #[arg(long)]
    pub gt_as_prediction: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct VizArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image_id: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `run.json`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    /// key=value config applied to every variant (module flags are
    /// overridden per row).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<SupervisionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<ImageSplit, String> {
    match s {
        "train" => Ok(ImageSplit::Train),
        "val" => Ok(ImageSplit::Val),
        other => Err(format!("unknown split {other:?} (expected train or val)")),
    }
}

fn parse_cats(list: &str) -> Result<Vec<ShapeKind>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| ShapeKind::from_name(s).ok_or_else(|| Error::InvalidArgument(format!("unknown shape {s:?}"))))
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn write_run_record(dir: &Path, cli: &Cli, config: Option<&TrainConfig>, extra: serde_json::Value) -> Result<()> {
    create_dir(dir)?;
    let record = json!({
        "argv": std::env::args().collect::<Vec<_>>(),
        "command": cli.command,
        "config": config,
        "seed": config.map(|c| c.seed),
        "threads": rayon::current_num_threads(),
        "versions": {
            "cpmask": env!("CARGO_PKG_VERSION"),
            "checkpoint_format": FORMAT_VERSION,
        },
        "result": extra,
    });
    write_json(&dir.join(RUN_FILE), &record)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_file(p),
        None => Ok(TrainConfig::default()),
    }
}

/// What a successful command reports back to `main`.
pub enum Outcome {
    Done,
    /// The command ran but a validation it performs failed.
    Failed(String),
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    with_thread_pool(|| dispatch(cli))?
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Viz(a) => cmd_viz(cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(cli, a),
        Command::Ablate(a) => cmd_ablate(cli, a),
    }
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<Outcome> {
    let config = GenConfig {
        seed: a.seed,
        n_train: a.num_train,
        n_val: a.num_val,
        base_cats: parse_cats(&a.base_cats)?,
        novel_cats: parse_cats(&a.novel_cats)?,
        height: a.size,
        width: a.size,
    };
    let manifest = generate_dataset(&config, &a.out)?;
    println!(
        "wrote {} train / {} val images ({} annotations) to {}",
        manifest.counts.train,
        manifest.counts.val,
        manifest.counts.annotations,
        a.out.display()
    );
    write_run_record(&a.out, cli, None, serde_json::to_value(&manifest)?)?;
    Ok(Outcome::Done)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<Outcome> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(m) = a.mode {
        config.supervision_mode = m;
    }
    if let Some(k) = a.shots {
        config.shots = k;
    }
    config.validate()?;
    let dataset = load_dataset(&a.data)?;
    create_dir(&a.out)?;
    let log_path = a.out.join(TRAIN_LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let opts = || TrainOptions {
        dump_dir: Some(&a.out),
        ..Default::default()
    };
    let mut out = train(
        None,
        &config,
        &dataset,
        TrainOptions {
            log_writer: Some(&mut log_file),
            ..opts()
        },
    )?;
    if config.supervision_mode == SupervisionMode::Fewshot {
        out = finetune_fewshot(
            out.state,
            &dataset,
            config.shots,
            &config,
            TrainOptions {
                log_writer: Some(&mut log_file),
                ..opts()
            },
        )?;
    }
    drop(log_file);
    save_checkpoint(&out.state, &a.out.join(CHECKPOINT_FILE))?;
    let last = out.log.last().map(|r| r.total);
    println!("trained {} iterations, final loss {:?}", out.state.iteration, last);
    write_run_record(
        &a.out,
        cli,
        Some(&config),
        json!({ "iterations": out.state.iteration, "final_total_loss": last }),
    )?;
    Ok(Outcome::Done)
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<Outcome> {
    let dataset = load_dataset(&a.data)?;
    let (report, config) = if a.gt_as_prediction {
        (evaluate_ground_truth(&dataset, a.split)?, None)
    } else {
        let ckpt = a.ckpt.as_ref().expect("clap requires --ckpt");
        let state = load_checkpoint(ckpt)?;
        (evaluate(&state.params, &dataset, a.split)?, Some(state.config))
    };
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(&a.report, &report)?;
    println!(
        "AP {:.4}  AP50 {:.4}  AP75 {:.4}  (novel AP {:.4}, base AP {:.4})",
        report.all.ap, report.all.ap50, report.all.ap75, report.novel.ap, report.base.ap
    );
    let dir = a.report.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_run_record(dir, cli, config.as_ref(), json!({ "all": report.all, "novel": report.novel }))?;
    Ok(Outcome::Done)
}

fn cmd_viz(cli: &Cli, a: &VizArgs) -> Result<Outcome> {
    let dataset = load_dataset(&a.data)?;
    let state = load_checkpoint(&a.ckpt)?;
    let files = emit_heatmaps(&state.params, &dataset, a.image_id, &a.out)?;
    for f in &files {
        println!("{}", f.display());
    }
    write_run_record(&a.out, cli, Some(&state.config), json!({ "files": files }))?;
    Ok(Outcome::Done)
}

/// Worst relative error over the segment, boundary, affinity (both
/// normalizations) and composite pathways on a small generated batch.
pub fn gradcheck_all(seed: u64, coords: usize) -> Result<Vec<(String, crate::losses::GradCheckReport)>> {
    let ds = generate_samples(&GenConfig {
        seed,
        n_train: 2,
        n_val: 0,
        height: 32,
        width: 32,
        ..Default::default()
    })?;
    let weights = |b: f64, a: f64, s: f64| LossWeights {
        detect: 1.0,
        boundary: b,
        affinity: a,
        segment: s,
    };
    let cases = [
        ("segment", NormalizeMode::Row, weights(0.0, 0.0, 1.0)),
        ("boundary", NormalizeMode::Row, weights(1.0, 0.0, 0.0)),
        ("affinity_row", NormalizeMode::Row, weights(0.0, 1.0, 0.0)),
        ("affinity_global", NormalizeMode::Global, weights(0.0, 1.0, 0.0)),
        ("composite_row", NormalizeMode::Row, LossWeights::default()),
        ("composite_global", NormalizeMode::Global, LossWeights::default()),
    ];
    let mut out = Vec::new();
    for (k, (name, mode, w)) in cases.into_iter().enumerate() {
        let config = TrainConfig {
            channels: 8,
            roi_size: 4,
            mask_size: 8,
            normalize_mode: mode,
            box_jitter: 0.1,
            seed: seed.wrapping_add(k as u64),
            ..Default::default()
        };
        let params = ModelParams::init(config.architecture(), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let batch = ds
            .samples
            .iter()
            .map(|s| make_image_sample(s, &config, &|_| true, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let report = gradient_check(
            &params,
            |p, g| Ok(batch_objective(p, &batch, &w, g)?.total),
            |_| true,
            Some(&|p: &ModelParams| relu_pattern(p, &batch)),
            coords,
            config.seed,
        )?;
        out.push((name.to_string(), report));
    }
    Ok(out)
}

fn cmd_gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<Outcome> {
    let reports = gradcheck_all(a.seed, 200)?;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (name, r) in &reports {
        println!(
            "{name:<17} max rel err {:.3e} (strict {:.3e}) over {} coords, {} below resolution, {} skipped at kinks",
            r.max_rel_error, r.strict_max_rel_error, r.checked, r.below_resolution, r.skipped_nonsmooth
        );
        worst = worst.max(r.max_rel_error);
        ok &= r.passed();
    }
    println!("max rel err {worst:.3e} (tolerance {GRADCHECK_TOL:e}): {}", if ok { "PASS" } else { "FAIL" });
    let summary: serde_json::Map<_, _> = reports
        .iter()
        .map(|(n, r)| (n.clone(), json!({ "max_rel_error": r.max_rel_error, "passed": r.passed() })))
        .collect();
    write_run_record(&a.out, cli, None, json!({ "max_rel_error": worst, "passed": ok, "pathways": summary }))?;
    Ok(if ok {
        Outcome::Done
    } else {
        Outcome::Failed(format!("gradient check failed: max rel err {worst:.3e}"))
    })
}

fn cmd_ablate(cli: &Cli, a: &AblateArgs) -> Result<Outcome> {
    if a.seeds == 0 {
        return Err(Error::InvalidArgument("--seeds must be >= 1".into()));
    }
    let config = load_config(a.config.as_deref())?;
    let dataset = load_dataset(&a.data)?;
    create_dir(&a.out)?;
    let table = run_ablation(&dataset, &config, a.seeds)?;
    write_json(&a.out.join("ablation.json"), &table)?;
    let text = table.to_text();
    std::fs::write(a.out.join("ablation.txt"), &text).map_err(|e| Error::io(a.out.join("ablation.txt"), e))?;
    print!("{text}");
    write_run_record(&a.out, cli, Some(&config), serde_json::to_value(&table)?)?;
    Ok(Outcome::Done)
}
