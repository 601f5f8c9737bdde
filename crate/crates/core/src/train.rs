//! Two-stage training: pre-train on dense biased source labels, freeze part
//! of the network, fine-tune on sparse accurate target labels. The phase
//! model runs first; its predictions become input channel 24 of the three
//! property models.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geo::{Mask, Raster};
use crate::nn::{AdamState, Arch, FreezePolicy, Mode, ResUnetParams, Tape, Task, Tensor};
use crate::scene::{LabelSet, Property, Scene, SceneStack, BASE_CHANNELS, CHAINED_CHANNELS, CLEAR};
use crate::tiles::{extract_tile, plan_tiles, Blend, MosaicBuilder, TilePlan, TileSpec, DEFAULT_TILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Mse,
}

/// Hyperparameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Pre-training epochs.
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub min_labeled_fraction: f64,
    pub freeze_policy: FreezePolicy,
    pub tile_size: usize,
    pub bn_momentum: f64,
    /// Save a checkpoint every this many epochs; 0 turns checkpoints off.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Desk-scale defaults for a model of `task`.
    pub fn for_task(task: Task) -> Self {
        Self {
            lr: 1e-3,
            epochs: 40,
            finetune_epochs: 40,
            batch_size: if task.is_classifier() { 16 } else { 8 },
            loss: if task.is_classifier() { LossKind::Ce } else { LossKind::Mse },
            seed: 0,
            min_labeled_fraction: 0.10,
            freeze_policy: FreezePolicy::Encoder,
            tile_size: DEFAULT_TILE,
            bn_momentum: 0.1,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        ensure!(self.batch_size >= 2, InvalidArgument, "batch_size must be at least 2 for batch norm");
        ensure!(
            self.min_labeled_fraction > 0.0 && self.min_labeled_fraction <= 1.0,
            InvalidArgument,
            "min_labeled_fraction must lie in (0, 1]"
        );
        ensure!(self.lr >= 0.0 && self.lr.is_finite(), InvalidArgument, "lr must be finite and non-negative");
        ensure!(self.tile_size >= 8, InvalidArgument, "tile_size must be at least 8");
        let want = if task.is_classifier() { LossKind::Ce } else { LossKind::Mse };
        ensure!(
            self.loss == want,
            InvalidArgument,
            "{task} model needs loss {want:?}, configured {:?}",
            self.loss
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Source,
    Target,
}

impl LabelSource {
    pub fn of<'a>(&self, scene: &'a Scene) -> &'a LabelSet {
        match self {
            LabelSource::Source => &scene.source,
            LabelSource::Target => &scene.target,
        }
    }
}

/// One training tile.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene: usize,
    pub spec: TileSpec,
    /// Raw input `[C × s × s]`.
    pub x: Vec<f32>,
    /// Class index (phase) or physical value (properties), per pixel.
    pub target: Vec<f32>,
    pub mask: Vec<bool>,
}

fn task_raster(labels: &LabelSet, task: Task) -> &Raster {
    match task {
        Task::Clp => &labels.clp,
        Task::Cth => labels.property(Property::Cth),
        Task::Cer => labels.property(Property::Cer),
        Task::Cot => labels.property(Property::Cot),
    }
}

/// Cut disjoint tiles from every stack and keep those whose label coverage
/// reaches `cfg.min_labeled_fraction`, shuffled deterministically.
pub fn build_samples(stacks: &[SceneStack], labels: &[&LabelSet], task: Task, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    ensure!(!stacks.is_empty(), Empty, "no scenes to sample");
    ensure!(stacks.len() == labels.len(), Shape, "{} stacks for {} label sets", stacks.len(), labels.len());
    let s = cfg.tile_size;
    let mut out = Vec::new();
    for (k, (stack, lab)) in stacks.iter().zip(labels).enumerate() {
        let g = stack.grid();
        g.check_same(lab.grid(), "training labels")?;
        let plan = plan_tiles(g.nrows, g.ncols, s, s)?;
        let raster = task_raster(lab, task);
        let cover: Vec<f64> = lab.coverage.data().iter().map(|&c| c as u8 as f64).collect();
        let vals = raster.values();
        let valid: Vec<f64> = raster.valid().iter().map(|&v| v as u8 as f64).collect();
        for spec in &plan.tiles {
            let planes: [&[f64]; 3] = [&cover, vals, &valid];
            let t = crate::tiles::extract_tile_from(&planes, g.nrows, g.ncols, spec);
            let n = s * s;
            let covered = t[..n].iter().filter(|&&c| c > 0.5).count();
            if (covered as f64) < cfg.min_labeled_fraction * n as f64 {
                continue;
            }
            let mask: Vec<bool> = (0..n).map(|p| t[p] > 0.5 && t[2 * n + p] > 0.5).collect();
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let target = (0..n).map(|p| if mask[p] { t[n + p] as f32 } else { 0.0 }).collect();
            let x = extract_tile(stack, spec).into_iter().map(|v| v as f32).collect();
            out.push(Sample {
                scene: k,
                spec: *spec,
                x,
                target,
                mask,
            });
        }
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    Ok(out)
}

/// Per-channel mean and standard deviation over all sample pixels.
fn input_stats(samples: &[Sample], channels: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0f64; channels];
    let mut sq = vec![0.0f64; channels];
    for s in samples {
        for c in 0..channels {
            for &v in &s.x[c * n..(c + 1) * n] {
                let v = v as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let m = (samples.len() * n) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, mu)| {
            let var = (q / m - mu * mu).max(0.0);
            if var.sqrt() > 1e-6 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn normalize_into<T: crate::nn::Scalar>(p: &ResUnetParams<f32>, x: &[f32], n: usize, out: &mut Vec<T>) {
    for (c, (mu, sd)) in p.norm.input_mean.iter().zip(&p.norm.input_std).enumerate() {
        let (mu, inv) = (*mu as f32, 1.0 / *sd as f32);
        out.extend(x[c * n..(c + 1) * n].iter().map(|&v| T::of_f64(((v - mu) * inv) as f64)));
    }
}

/// Per-epoch mean training loss.
pub type LossCurve = Vec<f64>;

/// Called after every epoch with the epoch index (from 1) and the model.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &ResUnetParams<f32>) -> Result<()>;

fn fit(
    params: &mut ResUnetParams<f32>,
    samples: &[Sample],
    cfg: &TrainConfig,
    trainable: &[bool],
    epochs: usize,
    stage_seed: u64,
    mut hook: Option<EpochHook<'_>>,
) -> Result<LossCurve> {
    let task = params.arch.task;
    let c = params.arch.in_channels;
    let s = cfg.tile_size;
    let n = s * s;
    if let Some(bad) = samples.iter().find(|x| x.x.len() != c * n) {
        return Err(Error::Shape(format!(
            "{task} model expects {c} channels of {s}×{s}, sample from scene {} has {} values",
            bad.scene,
            bad.x.len()
        )));
    }
    let mut adam = AdamState::new(params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed);
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let b = chunk.len();
            let mut x = Vec::with_capacity(b * c * n);
            let mut mask = Vec::with_capacity(b * n);
            for &k in chunk {
                normalize_into(params, &samples[k].x, n, &mut x);
                mask.extend_from_slice(&samples[k].mask);
            }
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let mut tape = Tape::<f32>::new();
            let xv = tape.leaf(Tensor::new(vec![b, c, s, s], x)?);
            let f = params.forward(&mut tape, xv, Mode::Train(Some(trainable)))?;
            let loss = if task.is_classifier() {
                let labels: Vec<u8> = chunk.iter().flat_map(|&k| samples[k].target.iter().map(|&v| v as u8)).collect();
                tape.cross_entropy_masked(f.out, &labels, &mask)?
            } else {
                let t: Vec<f32> = chunk
                    .iter()
                    .flat_map(|&k| {
                        let smp = &samples[k];
                        smp.target
                            .iter()
                            .zip(&smp.mask)
                            .map(|(&v, &m)| if m { params.norm.encode_target(v as f64) as f32 } else { 0.0 })
                    })
                    .collect();
                tape.mse_masked(f.out, &t, &mask)?
            };
            let lv = tape.value(loss).data[0] as f64;
            if !lv.is_finite() {
                return Err(Error::Numeric(format!("{task} loss became {lv} in epoch {epoch}")));
            }
            tape.backward(loss)?;
            let grads: Vec<Option<&[f32]>> = f.params.iter().map(|&v| tape.grad(v)).collect();
            adam.step(params, &grads, trainable, cfg.lr)?;
            params.update_running_stats(&f.bn_stats, cfg.bn_momentum);
            total += lv;
            batches += 1;
        }
        ensure!(batches > 0, Empty, "no usable batch of at least two labelled tiles for the {task} model");
        let mean = total / batches as f64;
        log::info!("{task} epoch {epoch}/{epochs}: loss {mean:.5}");
        curve.push(mean);
        if let Some(h) = hook.as_mut() {
            h(epoch, params)?;
        }
    }
    Ok(curve)
}

/// Stage-1 training of a freshly initialized model on source-label tiles.
/// Input and target normalization statistics are estimated here and kept
/// for every later stage.
pub fn pretrain(
    task: Task,
    samples: &[Sample],
    cfg: &TrainConfig,
    hook: Option<EpochHook<'_>>,
) -> Result<(ResUnetParams<f32>, LossCurve)> {
    cfg.validate(task)?;
    ensure!(!samples.is_empty(), Empty, "no pre-training tiles for the {task} model");
    let c = samples[0].x.len() / (cfg.tile_size * cfg.tile_size);
    let mut p = ResUnetParams::<f32>::init(Arch::new(task, c), cfg.seed);
    let n = cfg.tile_size * cfg.tile_size;
    let (mean, std) = input_stats(samples, c, n);
    p.norm.input_mean = mean;
    p.norm.input_std = std;
    if !task.is_classifier() {
        let mut tr = Vec::new();
        for s in samples {
            for (&v, &m) in s.target.iter().zip(&s.mask) {
                if m {
                    let mut probe = p.norm.clone();
                    probe.target_mean = 0.0;
                    probe.target_std = 1.0;
                    tr.push(probe.encode_target(v as f64));
                }
            }
        }
        let mu = tr.iter().sum::<f64>() / tr.len() as f64;
        let sd = (tr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / tr.len() as f64).sqrt();
        p.norm.target_mean = mu;
        p.norm.target_std = if sd > 1e-9 { sd } else { 1.0 };
    }
    let trainable = p.trainable_mask(FreezePolicy::None);
    let curve = fit(&mut p, samples, cfg, &trainable, cfg.epochs, cfg.seed ^ 0x5052_4554, hook)?;
    Ok((p, curve))
}

/// Trainable flag per tensor under `policy`.
pub fn apply_freeze(params: &ResUnetParams<f32>, policy: FreezePolicy) -> Vec<bool> {
    params.trainable_mask(policy)
}

/// Stage-2 training on target-label tiles with part of the network frozen.
pub fn finetune(
    pretrained: &ResUnetParams<f32>,
    samples: &[Sample],
    cfg: &TrainConfig,
    hook: Option<EpochHook<'_>>,
) -> Result<(ResUnetParams<f32>, LossCurve)> {
    let task = pretrained.arch.task;
    cfg.validate(task)?;
    ensure!(!samples.is_empty(), Empty, "no fine-tuning tiles for the {task} model");
    let mut p = pretrained.clone();
    let trainable = apply_freeze(&p, cfg.freeze_policy);
    let curve = fit(&mut p, samples, cfg, &trainable, cfg.finetune_epochs, cfg.seed ^ 0x4649_4e45, hook)?;
    Ok((p, curve))
}

/// The four models of a retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSuite {
    pub clp: ResUnetParams<f32>,
    pub cth: ResUnetParams<f32>,
    pub cer: ResUnetParams<f32>,
    pub cot: ResUnetParams<f32>,
}

impl ModelSuite {
    pub fn get(&self, task: Task) -> &ResUnetParams<f32> {
        match task {
            Task::Clp => &self.clp,
            Task::Cth => &self.cth,
            Task::Cer => &self.cer,
            Task::Cot => &self.cot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in Task::ALL {
            let m = self.get(t);
            ensure!(m.arch.task == t, InvalidArgument, "{t} slot holds a {} model", m.arch.task);
            let want = if t.is_classifier() { BASE_CHANNELS } else { CHAINED_CHANNELS };
            ensure!(
                m.arch.in_channels == want,
                Shape,
                "{t} model takes {} channels, expected {want}",
                m.arch.in_channels
            );
        }
        Ok(())
    }
}

/// Settings of a whole two-stage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub clp: TrainConfig,
    pub cth: TrainConfig,
    pub cer: TrainConfig,
    pub cot: TrainConfig,
    /// Feed label phase (where labelled) instead of the phase model's
    /// prediction as channel 24 during training.
    pub teacher_forcing: bool,
    /// Tiling used when the phase model labels the training scenes.
    pub inference_stride: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let mut cfg = Self {
            clp: TrainConfig::for_task(Task::Clp),
            cth: TrainConfig::for_task(Task::Cth),
            cer: TrainConfig::for_task(Task::Cer),
            cot: TrainConfig::for_task(Task::Cot),
            teacher_forcing: false,
            inference_stride: 48,
        };
        for (k, t) in Task::ALL.iter().enumerate() {
            cfg.get_mut(*t).seed = k as u64;
        }
        cfg
    }
}

impl SuiteConfig {
    pub fn get(&self, task: Task) -> &TrainConfig {
        match task {
            Task::Clp => &self.clp,
            Task::Cth => &self.cth,
            Task::Cer => &self.cer,
            Task::Cot => &self.cot,
        }
    }

    pub fn get_mut(&mut self, task: Task) -> &mut TrainConfig {
        match task {
            Task::Clp => &mut self.clp,
            Task::Cth => &mut self.cth,
            Task::Cer => &mut self.cer,
            Task::Cot => &mut self.cot,
        }
    }
}

/// Channel-24 stacks for the property models: predicted phase, or with
/// teacher forcing the label phase where labelled.
pub fn chained_stacks(
    scenes: &[Scene],
    clp_model: Option<&ResUnetParams<f32>>,
    teacher: Option<LabelSource>,
    stride: usize,
) -> Result<Vec<SceneStack>> {
    let clp_model = clp_model.ok_or_else(|| Error::Missing("phase (clp) model required before property training".into()))?;
    scenes
        .iter()
        .map(|sc| {
            let g = *sc.grid();
            let plan = plan_tiles(g.nrows, g.ncols, DEFAULT_TILE, stride.min(DEFAULT_TILE))?;
            let pred = predict_clp(clp_model, &sc.stack, &plan)?;
            let phase = match teacher {
                None => pred,
                Some(src) => {
                    let lab = &src.of(sc).clp;
                    Raster::from_fn(g, |i, j| lab.get(i, j).or(pred.get(i, j)))
                }
            };
            sc.stack.base().with_clp(&phase)
        })
        .collect()
}

/// Both suites produced by a two-stage run, with their loss curves.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub pretrained: ModelSuite,
    pub finetuned: ModelSuite,
    pub curves: Vec<(Task, LabelSource, LossCurve)>,
}

/// Pre-train all four models on source labels, then fine-tune them on
/// target labels. Within each stage the phase model goes first and feeds
/// channel 24 of the property models.
pub fn train_suite(scenes: &[Scene], cfg: &SuiteConfig) -> Result<SuiteOutcome> {
    let mut curves = Vec::new();
    let pretrained = train_stage(scenes, cfg, LabelSource::Source, None, &mut curves)?;
    let finetuned = train_stage(scenes, cfg, LabelSource::Target, Some(&pretrained), &mut curves)?;
    Ok(SuiteOutcome {
        pretrained,
        finetuned,
        curves,
    })
}

/// Receives `(task, epoch, model)` whenever a model's `checkpoint_every`
/// divides the finished epoch.
pub type CheckpointSink<'a> = &'a mut dyn FnMut(Task, usize, &ResUnetParams<f32>) -> Result<()>;

/// One stage for all four models: pre-training when `base` is `None`,
/// fine-tuning of `base` otherwise.
pub fn train_stage(
    scenes: &[Scene],
    cfg: &SuiteConfig,
    source: LabelSource,
    base: Option<&ModelSuite>,
    curves: &mut Vec<(Task, LabelSource, LossCurve)>,
) -> Result<ModelSuite> {
    train_stage_with(scenes, cfg, source, base, curves, None)
}

/// [`train_stage`] with periodic checkpoints passed to `sink`.
pub fn train_stage_with(
    scenes: &[Scene],
    cfg: &SuiteConfig,
    source: LabelSource,
    base: Option<&ModelSuite>,
    curves: &mut Vec<(Task, LabelSource, LossCurve)>,
    mut sink: Option<CheckpointSink<'_>>,
) -> Result<ModelSuite> {
    ensure!(!scenes.is_empty(), Empty, "no training scenes");
    let labels: Vec<&LabelSet> = scenes.iter().map(|s| source.of(s)).collect();
    let mut run = |task: Task, stacks: &[SceneStack], curves: &mut Vec<_>| -> Result<ResUnetParams<f32>> {
        let tc = cfg.get(task);
        let samples = build_samples(stacks, &labels, task, tc)?;
        log::info!("{task} {source:?} stage: {} tiles", samples.len());
        let every = tc.checkpoint_every;
        let mut save = |epoch: usize, p: &ResUnetParams<f32>| -> Result<()> {
            match sink.as_mut() {
                Some(f) if every > 0 && epoch % every == 0 => f(task, epoch, p),
                _ => Ok(()),
            }
        };
        let (m, curve) = match base {
            None => pretrain(task, &samples, tc, Some(&mut save))?,
            Some(b) => finetune(b.get(task), &samples, tc, Some(&mut save))?,
        };
        curves.push((task, source, curve));
        Ok(m)
    };
    let base_stacks: Vec<SceneStack> = scenes.iter().map(|s| s.stack.base()).collect();
    let clp = run(Task::Clp, &base_stacks, curves)?;
    drop(base_stacks);
    let teacher = cfg.teacher_forcing.then_some(source);
    let chained = chained_stacks(scenes, Some(&clp), teacher, cfg.inference_stride)?;
    let cth = run(Task::Cth, &chained, curves)?;
    let cer = run(Task::Cer, &chained, curves)?;
    let cot = run(Task::Cot, &chained, curves)?;
    Ok(ModelSuite { clp, cth, cer, cot })
}

/// Tiles at `plan`, normalized for `model`, in batches of `batch`.
fn infer_tiles(model: &ResUnetParams<f32>, stack: &SceneStack, plan: &TilePlan, batch: usize) -> Result<Vec<Vec<f64>>> {
    ensure!(
        stack.len() == model.arch.in_channels,
        Shape,
        "{} model takes {} channels, stack has {}",
        model.arch.task,
        model.arch.in_channels,
        stack.len()
    );
    let s = plan.size;
    let n = s * s;
    let c = stack.len();
    let oc = model.arch.out_channels;
    let mut out = Vec::with_capacity(plan.tiles.len());
    for chunk in plan.tiles.chunks(batch.max(1)) {
        let mut x = Vec::with_capacity(chunk.len() * c * n);
        for spec in chunk {
            let raw: Vec<f32> = extract_tile(stack, spec).into_iter().map(|v| v as f32).collect();
            normalize_into(model, &raw, n, &mut x);
        }
        let y = model.predict(Tensor::new(vec![chunk.len(), c, s, s], x)?)?;
        for b in 0..chunk.len() {
            out.push(y.data[b * oc * n..(b + 1) * oc * n].iter().map(|&v| v as f64).collect());
        }
    }
    Ok(out)
}

const INFER_BATCH: usize = 8;

/// Class probabilities `[3 × s × s]` of every tile.
fn clp_probabilities(model: &ResUnetParams<f32>, stack: &SceneStack, plan: &TilePlan) -> Result<Vec<Vec<f64>>> {
    let n = plan.size * plan.size;
    let mut tiles = infer_tiles(model, stack, plan, INFER_BATCH)?;
    for t in &mut tiles {
        for p in 0..n {
            let m = (0..3).map(|c| t[c * n + p]).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..3).map(|c| (t[c * n + p] - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..3 {
                t[c * n + p] = e[c] / z;
            }
        }
    }
    Ok(tiles)
}

fn mosaic_planes(tiles: &[Vec<f64>], channels: usize, plan: &TilePlan) -> Result<Vec<Vec<f64>>> {
    let mut b = MosaicBuilder::new(plan, channels);
    for (k, t) in tiles.iter().enumerate() {
        b.add(k, t)?;
    }
    b.finish()
}

/// Phase by per-pixel argmax of the mosaicked class probabilities; ties go
/// to the lower class.
pub fn predict_clp(model: &ResUnetParams<f32>, stack: &SceneStack, plan: &TilePlan) -> Result<Raster> {
    ensure!(model.arch.task == Task::Clp, InvalidArgument, "expected a phase model, got {}", model.arch.task);
    let g = *stack.grid();
    let probs = mosaic_planes(&clp_probabilities(model, stack, plan)?, 3, plan)?;
    let v = (0..g.len())
        .map(|k| {
            let mut best = 0;
            for c in 1..3 {
                if probs[c][k] > probs[best][k] {
                    best = c;
                }
            }
            best as f64
        })
        .collect();
    Raster::from_values(g, v)
}

/// Mosaicked property in physical units, valid where `cloudy`.
pub fn predict_property(model: &ResUnetParams<f32>, stack: &SceneStack, plan: &TilePlan, cloudy: &Mask) -> Result<Raster> {
    let g = *stack.grid();
    let tiles = infer_tiles(model, stack, plan, INFER_BATCH)?;
    let plane = mosaic_planes(&tiles, 1, plan)?.remove(0);
    let values: Vec<f64> = plane.iter().map(|&v| model.norm.decode_target(v)).collect();
    Raster::new(g, values, cloudy.data().to_vec())
}

/// Full-scene retrieval and the compute time it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub labels: LabelSet,
    pub seconds: f64,
}

/// Inference plan for a scene: tiles of `size` at `stride` with `blend`.
pub fn scene_plan(stack: &SceneStack, size: usize, stride: usize, blend: Blend) -> Result<TilePlan> {
    let g = stack.grid();
    plan_tiles(g.nrows, g.ncols, size, stride)?.with_blend(blend)
}

/// Run the four chained models over a 23-channel stack.
pub fn predict_scene(suite: &ModelSuite, stack: &SceneStack, plan: &TilePlan) -> Result<Retrieval> {
    suite.validate()?;
    let g = *stack.grid();
    ensure!(
        plan.nrows == g.nrows && plan.ncols == g.ncols,
        Shape,
        "tile plan is {}×{}, scene is {}×{}",
        plan.nrows,
        plan.ncols,
        g.nrows,
        g.ncols
    );
    let t0 = Instant::now();
    let base = stack.base();
    let clp = predict_clp(&suite.clp, &base, plan)?;
    let cloudy = Mask::from_fn(g, |i, j| clp.get(i, j) != Some(CLEAR as f64));
    let chained = base.with_clp(&clp)?;
    let cth = predict_property(&suite.cth, &chained, plan, &cloudy)?;
    let cer = predict_property(&suite.cer, &chained, plan, &cloudy)?;
    let cot = predict_property(&suite.cot, &chained, plan, &cloudy)?;
    let seconds = t0.elapsed().as_secs_f64();
    Ok(Retrieval {
        labels: LabelSet {
            clp,
            cth,
            cer,
            cot,
            coverage: Mask::filled(g, true),
        },
        seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoGrid;
    use crate::scene::{gen_dataset, scene_timestamps, DatasetConfig};

    fn scenes(n: usize, size: usize, hours: &[u32], swath: usize) -> Vec<Scene> {
        let g = GeoGrid::new(40.0, 95.0, 0.05, 0.05, size, size).unwrap();
        let ts = scene_timestamps(2019, &[4], hours, n).unwrap();
        let cfg = DatasetConfig {
            swath_width_px: swath,
            ..Default::default()
        };
        gen_dataset(7, n, &g, &ts, &cfg).unwrap()
    }

    fn small_cfg(task: Task) -> TrainConfig {
        TrainConfig {
            epochs: 1,
            finetune_epochs: 1,
            batch_size: 4,
            tile_size: 16,
            ..TrainConfig::for_task(task)
        }
    }

    #[test]
    fn night_scene_gives_no_source_tiles() {
        // 18 UTC is local night around 95°E.
        let sc = scenes(1, 32, &[18], 8);
        let stacks = vec![sc[0].stack.clone()];
        let got = build_samples(&stacks, &[&sc[0].source], Task::Clp, &small_cfg(Task::Clp)).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn swath_quarter_tiles_are_kept() {
        let sc = scenes(1, 64, &[4], 16);
        let mut cfg = small_cfg(Task::Clp);
        cfg.tile_size = 64;
        let stacks = vec![sc[0].stack.clone()];
        let got = build_samples(&stacks, &[&sc[0].target], Task::Clp, &cfg).unwrap();
        assert_eq!(got.len(), 1);
        let covered = got[0].mask.iter().filter(|&&m| m).count();
        assert_eq!(covered, 16 * 64);
    }

    #[test]
    fn sample_order_is_seeded() {
        let sc = scenes(2, 64, &[4], 64);
        let stacks: Vec<SceneStack> = sc.iter().map(|s| s.stack.clone()).collect();
        let labels: Vec<&LabelSet> = sc.iter().map(|s| &s.target).collect();
        let cfg = small_cfg(Task::Cth);
        let a = build_samples(&stacks, &labels, Task::Cth, &cfg).unwrap();
        let b = build_samples(&stacks, &labels, Task::Cth, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.len() > 4);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let sc = scenes(1, 32, &[4], 32);
        let stacks = vec![sc[0].stack.base()];
        let mut cfg = small_cfg(Task::Clp);
        cfg.lr = 0.0;
        let samples = build_samples(&stacks, &[&sc[0].target], Task::Clp, &cfg).unwrap();
        let (p, curve) = pretrain(Task::Clp, &samples, &cfg, None).unwrap();
        assert_eq!(curve.len(), 1);
        let init = ResUnetParams::<f32>::init(Arch::new(Task::Clp, 23), cfg.seed);
        for (k, s) in p.specs.iter().enumerate() {
            if s.kind.learnable() {
                assert_eq!(p.tensors[k], init.tensors[k], "{}", s.name);
            }
        }
    }

    #[test]
    fn head_only_finetune_changes_only_head() {
        let sc = scenes(1, 32, &[4], 32);
        let stacks = vec![sc[0].stack.base()];
        let mut cfg = small_cfg(Task::Clp);
        let samples = build_samples(&stacks, &[&sc[0].source], Task::Clp, &cfg).unwrap();
        let (pre, _) = pretrain(Task::Clp, &samples, &cfg, None).unwrap();
        cfg.freeze_policy = FreezePolicy::AllButHead;
        let tgt = build_samples(&stacks, &[&sc[0].target], Task::Clp, &cfg).unwrap();
        let (fine, _) = finetune(&pre, &tgt, &cfg, None).unwrap();
        for (k, s) in pre.specs.iter().enumerate() {
            let same = pre.tensors[k] == fine.tensors[k];
            assert_eq!(same, !s.name.starts_with("head."), "{}", s.name);
        }
        assert!(finetune(&pre, &[], &cfg, None).is_err());
    }

    #[test]
    fn encoder_freeze_keeps_encoder_bits() {
        let sc = scenes(1, 32, &[4], 32);
        let stacks = vec![sc[0].stack.base()];
        let cfg = small_cfg(Task::Clp);
        let samples = build_samples(&stacks, &[&sc[0].source], Task::Clp, &cfg).unwrap();
        let (pre, _) = pretrain(Task::Clp, &samples, &cfg, None).unwrap();
        let (fine, _) = finetune(&pre, &samples, &cfg, None).unwrap();
        let mask = apply_freeze(&pre, FreezePolicy::Encoder);
        for (k, s) in pre.specs.iter().enumerate() {
            if !mask[k] && (s.name.starts_with("stem") || s.name.starts_with("enc") || s.name.starts_with("down")) {
                assert_eq!(pre.tensors[k], fine.tensors[k], "{}", s.name);
            }
        }
        assert_ne!(pre.tensors[pre.index_of("head.w").unwrap()], fine.tensors[fine.index_of("head.w").unwrap()]);
    }

    #[test]
    fn checkpoints_follow_the_configured_cadence() {
        let sc = scenes(2, 32, &[4], 32);
        let mut cfg = SuiteConfig::default();
        for t in Task::ALL {
            let c = cfg.get_mut(t);
            *c = TrainConfig {
                epochs: 3,
                checkpoint_every: 2,
                seed: c.seed,
                ..small_cfg(t)
            };
        }
        cfg.cer.checkpoint_every = 0;
        let mut seen = Vec::new();
        let mut sink = |task: Task, epoch: usize, _: &ResUnetParams<f32>| {
            seen.push((task, epoch));
            Ok(())
        };
        let mut curves = Vec::new();
        train_stage_with(&sc, &cfg, LabelSource::Source, None, &mut curves, Some(&mut sink)).unwrap();
        assert_eq!(seen, vec![(Task::Clp, 2), (Task::Cth, 2), (Task::Cot, 2)]);
    }

    #[test]
    fn property_stage_needs_phase_model() {
        let sc = scenes(1, 32, &[4], 32);
        assert!(matches!(chained_stacks(&sc, None, None, 48), Err(Error::Missing(_))));
    }
}
