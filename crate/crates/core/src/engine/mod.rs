//! SGD training of the mask branch under full, partial and few-shot
//! supervision.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{SupervisionMode, TrainConfig};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{batch_objective, ImageSample, LossReport, RoiSample};
use crate::maskops::{make_roi_targets, BBox, TargetParams};
use crate::net::{image_to_tensor, ModelParams};
use crate::shapesdata::{Dataset, ImageSplit, Instance, SceneSample};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CPMASK_THREADS";
const RUNNING_DECAY: f64 = 0.95;
// Separates the training RNG streams from the generator's.
const TRAIN_RNG_SALT: u64 = 0x7472_6169_6e5f_7267;
const FEWSHOT_RNG_SALT: u64 = 0x6665_7773_686f_7473;

/// Exponential moving averages of the logged loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningLoss {
    pub boundary: f64,
    pub affinity: f64,
    pub segment: f64,
    pub total: f64,
    pub updates: u64,
}

impl RunningLoss {
    fn update(&mut self, r: &LossReport) {
        let d = if self.updates == 0 { 0.0 } else { RUNNING_DECAY };
        let mix = |old: f64, new: f64| d * old + (1.0 - d) * new;
        self.boundary = mix(self.boundary, r.boundary);
        self.affinity = mix(self.affinity, r.affinity);
        self.segment = mix(self.segment, r.segment);
        self.total = mix(self.total, r.total);
        self.updates += 1;
    }
}

/// Parameters, optimizer buffers and progress of a run.
///
/// Batch sampling and box jitter draw from an RNG derived from
/// `(config.seed, iteration)`, so the iteration counter is the whole RNG
/// state. Parameters and momentum are kept at `f32` precision after every
/// update so that a checkpoint resumes bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub momentum: ModelParams,
    pub iteration: u64,
    pub config: TrainConfig,
    pub running: RunningLoss,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParams::init(config.architecture(), config.seed)?;
        round_to_f32(&mut params);
        Ok(Self {
            momentum: params.zeros_like(),
            params,
            iteration: 0,
            config: config.clone(),
            running: RunningLoss::default(),
        })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    pub boundary: f64,
    pub affinity: f64,
    pub segment: f64,
    pub total: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Receives one JSON line per iteration.
    pub log_writer: Option<&'a mut dyn Write>,
    /// Where to dump a checkpoint if the loss turns non-finite.
    pub dump_dir: Option<&'a Path>,
    /// Stop once the iteration counter reaches this value.
    pub stop_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRecord>,
}

/// Thread count from `CPMASK_THREADS`, else the available parallelism.
pub fn configured_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Run `f` on a rayon pool sized by [`configured_threads`].
pub fn with_thread_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(configured_threads()?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn round_to_f32(p: &mut ModelParams) {
    p.for_each_mut(|_, v| v.iter_mut().for_each(|x| *x = *x as f32 as f64));
}

/// Learning rate at `iteration`: a tenth of `lr` during warmup, then `lr`.
pub fn learning_rate(config: &TrainConfig, iteration: u64) -> f64 {
    if iteration < config.warmup_iters {
        0.1 * config.lr
    } else {
        config.lr
    }
}

/// Box with each corner coordinate moved by up to `jitter` times the box
/// extent, clipped to the image. Falls back to the original box when the
/// result would be narrower than a pixel.
pub fn jitter_box<R: Rng + ?Sized>(b: &BBox, jitter: f64, height: usize, width: usize, rng: &mut R) -> BBox {
    if jitter == 0.0 {
        return *b;
    }
    let mut d = || rng.gen_range(-jitter..=jitter);
    let x1 = (b.x + d() * b.w).max(0.0);
    let y1 = (b.y + d() * b.h).max(0.0);
    let x2 = (b.x2() + d() * b.w).min(width as f64);
    let y2 = (b.y2() + d() * b.h).min(height as f64);
    BBox::new(x1, y1, x2 - x1, y2 - y1)
        .ok()
        .filter(|j| j.w >= 1.0 && j.h >= 1.0)
        .unwrap_or(*b)
}

pub fn target_params(config: &TrainConfig) -> TargetParams {
    TargetParams {
        head_res: config.mask_size,
        affinity_res: config.roi_size,
        ..Default::default()
    }
}

/// Turn one scene into a training sample. `supervised` decides which
/// instances carry mask targets.
pub fn make_image_sample<R: Rng + ?Sized>(
    scene: &SceneSample,
    config: &TrainConfig,
    supervised: &dyn Fn(&Instance) -> bool,
    rng: &mut R,
) -> Result<ImageSample> {
    let (h, w) = (scene.height(), scene.width());
    let tp = target_params(config);
    let rois = scene
        .instances
        .iter()
        .map(|inst| {
            let bbox = jitter_box(&inst.bbox, config.box_jitter, h, w, rng);
            Ok(RoiSample {
                targets: make_roi_targets(&inst.mask, &bbox, &tp)?,
                bbox,
                supervised: supervised(inst),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ImageSample {
        image: image_to_tensor(&scene.image),
        rois,
    })
}

/// One SGD-with-momentum update (`v = mu v + g; p -= lr v`) on a prepared
/// batch.
pub fn sgd_step(state: &mut TrainState, batch: &[ImageSample], lr: f64) -> Result<LossReport> {
    let weights = state.config.loss_weights();
    let mut grads = state.params.zeros_like();
    let report = batch_objective(&state.params, batch, &weights, Some(&mut grads))?;
    if !report.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: state.iteration,
            dump: None,
        });
    }
    if !grads.all_finite() {
        return Err(Error::NonFiniteGradient(format!("iteration {}", state.iteration)));
    }
    let mu = state.config.momentum;
    let g = grads.flatten();
    let mut off = 0;
    state.momentum.for_each_mut(|_, v| {
        for (vi, gi) in v.iter_mut().zip(&g[off..]) {
            *vi = (mu * *vi + gi) as f32 as f64;
        }
        off += v.len();
    });
    let v = state.momentum.flatten();
    let mut off = 0;
    state.params.for_each_mut(|_, p| {
        for (pi, vi) in p.iter_mut().zip(&v[off..]) {
            *pi = (*pi - lr * vi) as f32 as f64;
        }
        off += p.len();
    });
    state.iteration += 1;
    state.running.update(&report);
    Ok(report)
}

struct Phase<'a> {
    pool: Vec<usize>,
    supervised: &'a dyn Fn(&Instance) -> bool,
    lr: &'a dyn Fn(u64) -> f64,
    end: u64,
}

fn run_phase(state: &mut TrainState, dataset: &Dataset, phase: &Phase, opts: &mut TrainOptions) -> Result<Vec<LogRecord>> {
    if phase.pool.is_empty() {
        return Err(Error::InvalidArgument("no training images carry mask supervision".into()));
    }
    let start = Instant::now();
    let end = opts.stop_at.map_or(phase.end, |s| s.min(phase.end));
    let mut log = Vec::new();
    while state.iteration < end {
        let iteration = state.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(state.config.seed ^ TRAIN_RNG_SALT);
        rng.set_stream(iteration);
        let n = state.config.batch_images;
        let picks: Vec<usize> = if phase.pool.len() >= n {
            sample(&mut rng, phase.pool.len(), n).into_vec()
        } else {
            (0..n).map(|_| rng.gen_range(0..phase.pool.len())).collect()
        };
        let batch = picks
            .iter()
            .map(|&k| make_image_sample(&dataset.samples[phase.pool[k]], &state.config, phase.supervised, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let lr = (phase.lr)(iteration);
        let report = match sgd_step(state, &batch, lr) {
            Err(Error::NonFiniteLoss { iteration, .. }) => {
                let dump = match opts.dump_dir {
                    Some(dir) => {
                        let path = dir.join(format!("nonfinite_iter{iteration}.bin"));
                        save_checkpoint(state, &path)?;
                        Some(path)
                    }
                    None => None,
                };
                return Err(Error::NonFiniteLoss { iteration, dump });
            }
            other => other?,
        };
        let record = LogRecord {
            iter: iteration,
            boundary: report.boundary,
            affinity: report.affinity,
            segment: report.segment,
            total: report.total,
            lr,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        if let Some(w) = opts.log_writer.as_deref_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(w, "{line}").map_err(|e| Error::io(Path::new("<training log>"), e))?;
        }
        if iteration.is_multiple_of(100) {
            log::info!("iter {iteration} total {:.4} lr {lr}", report.total);
        }
        log.push(record);
    }
    Ok(log)
}

fn train_pool(dataset: &Dataset, supervised: &dyn Fn(&Instance) -> bool) -> Vec<usize> {
    dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == ImageSplit::Train && s.instances.iter().any(supervised))
        .map(|(i, _)| i)
        .collect()
}

/// Train from scratch, or continue `state` up to `config.total_iters`.
///
/// Full mode supervises every instance; partial and few-shot modes
/// supervise base categories only (few-shot fine-tuning is a separate
/// step, [`finetune_fewshot`]). Only training-split images with at least
/// one supervised instance are sampled.
pub fn train(state: Option<TrainState>, config: &TrainConfig, dataset: &Dataset, mut opts: TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    let mut state = match state {
        Some(s) => s,
        None => TrainState::new(config)?,
    };
    if state.params.arch != config.architecture() {
        return Err(Error::Config("checkpoint architecture differs from config".into()));
    }
    state.config = config.clone();
    let full = config.supervision_mode == SupervisionMode::Full;
    let supervised = |inst: &Instance| full || !dataset.is_novel(inst.category_id);
    let lr = |it: u64| learning_rate(config, it);
    let phase = Phase {
        pool: train_pool(dataset, &supervised),
        supervised: &supervised,
        lr: &lr,
        end: config.total_iters,
    };
    let log = run_phase(&mut state, dataset, &phase, &mut opts)?;
    Ok(TrainOutcome { state, log })
}

/// Seeded choice of exactly `shots` training instances per novel category.
pub fn select_fewshot(dataset: &Dataset, shots: usize, seed: u64) -> Result<BTreeSet<u64>> {
    if shots == 0 {
        return Err(Error::Config("shots must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ FEWSHOT_RNG_SALT);
    let mut chosen = BTreeSet::new();
    for cat in dataset.categories_in(crate::shapesdata::CategorySplit::Novel) {
        let ids: Vec<u64> = dataset
            .split(ImageSplit::Train)
            .flat_map(|s| s.instances.iter())
            .filter(|i| i.category_id == cat)
            .map(|i| i.annotation_id)
            .collect();
        if ids.len() < shots {
            let name = dataset.category(cat).map_or("?", |c| c.name.as_str());
            return Err(Error::InvalidArgument(format!(
                "category {name} has {} training instances, fewer than {shots} shots",
                ids.len()
            )));
        }
        chosen.extend(sample(&mut rng, ids.len(), shots).into_iter().map(|k| ids[k]));
    }
    Ok(chosen)
}

/// Continue a base-trained state with full mask supervision on the base
/// categories plus `shots` selected instances per novel category, for
/// `config.finetune_iters` iterations at constant `config.finetune_lr`.
/// Momentum starts from zero.
pub fn finetune_fewshot(
    state: TrainState,
    dataset: &Dataset,
    shots: usize,
    config: &TrainConfig,
    mut opts: TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let selected = select_fewshot(dataset, shots, config.seed)?;
    let mut state = state;
    state.config = config.clone();
    state.momentum = state.params.zeros_like();
    let supervised = |inst: &Instance| !dataset.is_novel(inst.category_id) || selected.contains(&inst.annotation_id);
    let lr = |_: u64| config.finetune_lr;
    let phase = Phase {
        pool: train_pool(dataset, &supervised),
        supervised: &supervised,
        lr: &lr,
        end: state.iteration + config.finetune_iters,
    };
    let log = run_phase(&mut state, dataset, &phase, &mut opts)?;
    Ok(TrainOutcome { state, log })
}

/// Mask probabilities (`mask_size` square) for each image-space box.
pub fn predict_masks(params: &ModelParams, scene: &SceneSample, boxes: &[BBox]) -> Result<Vec<ndarray::Array2<f64>>> {
    let image = image_to_tensor(&scene.image);
    Ok(params
        .full_forward(&image, boxes)?
        .into_iter()
        .map(|f| f.mask_logits.mapv(crate::net::layers::sigmoid))
        .collect())
}
