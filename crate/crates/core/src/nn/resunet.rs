//! The ResUnet: a three-level residual encoder, a residual bottleneck and a
//! mirrored decoder with skip concatenation.
//!
//! ```text
//! stem   3×3 conv-BN-ReLU            C   → 16   H
//! enc1   residual block              16  → 16   H      (skip 1)
//! down1  3×3/2 conv-BN-ReLU          16  → 32   H/2
//! enc2   residual block              32  → 32          (skip 2)
//! down2                              32  → 64   H/4
//! enc3   residual block              64  → 64          (skip 3)
//! down3                              64  → 128  H/8
//! bottleneck residual block          128 → 128
//! up3    ×2 nearest, 3×3 conv-BN-ReLU 128 → 64  H/4, concat skip 3 → 128
//! dec3   residual block              128 → 64
//! up2 / dec2                         64 → 32 → (64) → 32
//! up1 / dec1                         32 → 16 → (32) → 16
//! head   1×1 conv with bias          16  → classes or 1
//! ```
//!
//! Convolutions feeding a batch norm carry no bias. A residual block is
//! `relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))`; the shortcut is the
//! identity or, when widths differ, a 1×1 projection with bias. Upsampled
//! maps are cropped to the skip size, so any tile size works, not just
//! multiples of 8.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{BatchStats, BnMode, Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{ensure, Error, Result};

/// What a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Clp,
    Cth,
    Cer,
    Cot,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Clp, Task::Cth, Task::Cer, Task::Cot];

    pub fn name(self) -> &'static str {
        match self {
            Task::Clp => "clp",
            Task::Cth => "cth",
            Task::Cer => "cer",
            Task::Cot => "cot",
        }
    }

    pub fn is_classifier(self) -> bool {
        self == Task::Clp
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub task: Task,
    pub in_channels: usize,
    pub out_channels: usize,
    pub widths: [usize; 3],
    pub bottleneck: usize,
}

impl Arch {
    pub fn new(task: Task, in_channels: usize) -> Self {
        Self {
            task,
            in_channels,
            out_channels: if task.is_classifier() { 3 } else { 1 },
            widths: [16, 32, 64],
            bottleneck: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    Bias,
    BnScale,
    BnOffset,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are buffers, not learnable.
    pub fn learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Transform applied to regression targets before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetTransform {
    Identity,
    Log10,
}

/// Per-channel input z-score statistics and the regression target scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_transform: TargetTransform,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Normalization {
    pub fn identity(channels: usize, task: Task) -> Self {
        Self {
            input_mean: vec![0.0; channels],
            input_std: vec![1.0; channels],
            target_transform: if task == Task::Cot {
                TargetTransform::Log10
            } else {
                TargetTransform::Identity
            },
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    /// Physical target → normalized network target.
    pub fn encode_target(&self, v: f64) -> f64 {
        let t = match self.target_transform {
            TargetTransform::Identity => v,
            TargetTransform::Log10 => v.max(1e-6).log10(),
        };
        (t - self.target_mean) / self.target_std
    }

    /// Network output → physical units.
    pub fn decode_target(&self, v: f64) -> f64 {
        let t = v * self.target_std + self.target_mean;
        match self.target_transform {
            TargetTransform::Identity => t,
            TargetTransform::Log10 => 10f64.powf(t),
        }
    }
}

/// Block layout helper shared by [`param_specs`] and the forward pass.
struct Layout<'a> {
    specs: &'a mut Vec<ParamSpec>,
}

impl Layout<'_> {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) {
        self.specs.push(ParamSpec { name, shape, kind });
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize) {
        self.push(format!("{name}.conv.w"), vec![cout, cin, 3, 3], ParamKind::ConvWeight);
        self.bn(&format!("{name}.bn"), cout);
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.gamma"), vec![c], ParamKind::BnScale);
        self.push(format!("{name}.beta"), vec![c], ParamKind::BnOffset);
        self.push(format!("{name}.running_mean"), vec![c], ParamKind::RunningMean);
        self.push(format!("{name}.running_var"), vec![c], ParamKind::RunningVar);
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize) {
        self.push(format!("{name}.conv1.w"), vec![cout, cin, 3, 3], ParamKind::ConvWeight);
        self.bn(&format!("{name}.bn1"), cout);
        self.push(format!("{name}.conv2.w"), vec![cout, cout, 3, 3], ParamKind::ConvWeight);
        self.bn(&format!("{name}.bn2"), cout);
        if cin != cout {
            self.push(format!("{name}.proj.w"), vec![cout, cin, 1, 1], ParamKind::ConvWeight);
            self.push(format!("{name}.proj.b"), vec![cout], ParamKind::Bias);
        }
    }
}

/// Every tensor of the architecture, in canonical order.
pub fn param_specs(arch: &Arch) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut l = Layout { specs: &mut specs };
    let [w1, w2, w3] = arch.widths;
    let wb = arch.bottleneck;
    l.conv_bn("stem", arch.in_channels, w1);
    l.res("enc1", w1, w1);
    l.conv_bn("down1", w1, w2);
    l.res("enc2", w2, w2);
    l.conv_bn("down2", w2, w3);
    l.res("enc3", w3, w3);
    l.conv_bn("down3", w3, wb);
    l.res("bottleneck", wb, wb);
    l.conv_bn("up3", wb, w3);
    l.res("dec3", 2 * w3, w3);
    l.conv_bn("up2", w3, w2);
    l.res("dec2", 2 * w2, w2);
    l.conv_bn("up1", w2, w1);
    l.res("dec1", 2 * w1, w1);
    l.push("head.w".into(), vec![arch.out_channels, w1, 1, 1], ParamKind::ConvWeight);
    l.push("head.b".into(), vec![arch.out_channels], ParamKind::Bias);
    specs
}

/// Which tensors an optimizer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    None,
    /// Stem, encoder residual blocks and downsampling convs.
    Encoder,
    AllButHead,
}

const ENCODER_BLOCKS: [&str; 7] = ["stem", "enc1", "down1", "enc2", "down2", "enc3", "down3"];

fn block_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// All learnable tensors and buffers of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ResUnetParams<T = f32> {
    pub arch: Arch,
    pub specs: Vec<ParamSpec>,
    pub tensors: Vec<Tensor<T>>,
    pub norm: Normalization,
}

/// Result of a forward pass.
#[derive(Debug)]
pub struct Forward {
    pub out: Var,
    /// Tape variable of every tensor, aligned with `specs`.
    pub params: Vec<Var>,
    /// Batch statistics of training-mode batch norms, keyed by the index of
    /// the layer's `running_mean` tensor.
    pub bn_stats: Vec<(usize, BatchStats)>,
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// Batch statistics everywhere, except batch norms whose scale is frozen
    /// in the given trainable mask; those use their running statistics.
    Train(Option<&'a [bool]>),
    Eval,
}

impl<T: Scalar> ResUnetParams<T> {
    /// He-normal convolution weights, unit BN scale, zero offsets and biases.
    pub fn init(arch: Arch, seed: u64) -> Self {
        let specs = param_specs(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| match s.kind {
                ParamKind::ConvWeight => {
                    let fan_in: usize = s.shape[1..].iter().product();
                    let sd = (2.0 / fan_in as f64).sqrt();
                    let d = Normal::new(0.0, sd).expect("positive sd");
                    let data = (0..s.shape.iter().product::<usize>())
                        .map(|_| T::of_f64(d.sample(&mut rng)))
                        .collect();
                    Tensor::new(s.shape.clone(), data).expect("spec shape")
                }
                ParamKind::BnScale | ParamKind::RunningVar => Tensor::filled(&s.shape, T::one()),
                _ => Tensor::zeros(&s.shape),
            })
            .collect();
        let norm = Normalization::identity(arch.in_channels, arch.task);
        Self {
            arch,
            specs,
            tensors,
            norm,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|k| &self.tensors[k])
    }

    pub fn n_learnable(&self) -> usize {
        self.specs
            .iter()
            .zip(&self.tensors)
            .filter(|(s, _)| s.kind.learnable())
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ResUnetParams<U> {
        ResUnetParams {
            arch: self.arch.clone(),
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            norm: self.norm.clone(),
        }
    }

    /// Trainable flag per tensor. Buffers are never trainable; running
    /// statistics of frozen layers therefore stay fixed too.
    pub fn trainable_mask(&self, policy: FreezePolicy) -> Vec<bool> {
        self.specs
            .iter()
            .map(|s| {
                s.kind.learnable()
                    && match policy {
                        FreezePolicy::None => true,
                        FreezePolicy::Encoder => !ENCODER_BLOCKS.contains(&block_of(&s.name)),
                        FreezePolicy::AllButHead => block_of(&s.name) == "head",
                    }
            })
            .collect()
    }

    /// Blend running statistics toward a batch: `r ← (1−m)·r + m·batch`.
    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats)], momentum: f64) {
        for (k, s) in stats {
            for (slot, batch) in [(*k, &s.mean), (*k + 1, &s.var)] {
                for (r, &b) in self.tensors[slot].data.iter_mut().zip(batch) {
                    *r = T::of_f64((1.0 - momentum) * r.as_f64() + momentum * b);
                }
            }
        }
    }

    /// Record the network on `tape` for an input `[N, C, H, W]` that is
    /// already normalized.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode<'_>) -> Result<Forward> {
        let (_, c, h, w) = tape.value(x).dims4();
        ensure!(
            c == self.arch.in_channels,
            Shape,
            "{} model expects {} input channels, got {c}",
            self.arch.task,
            self.arch.in_channels
        );
        ensure!(h >= 1 && w >= 1, Shape, "empty input");
        let params: Vec<Var> = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let mut net = Net {
            p: self,
            tape,
            params: &params,
            mode,
            stats: Vec::new(),
        };
        let out = net.run(x)?;
        let bn_stats = net.stats;
        Ok(Forward { out, params, bn_stats })
    }

    /// Eval-mode output `[N, out, H, W]` for a normalized batch.
    pub fn predict(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let f = self.forward(&mut tape, xv, Mode::Eval)?;
        Ok(tape.take_value(f.out))
    }
}

struct Net<'a, T: Scalar> {
    p: &'a ResUnetParams<T>,
    tape: &'a mut Tape<T>,
    params: &'a [Var],
    mode: Mode<'a>,
    stats: Vec<(usize, BatchStats)>,
}

impl<T: Scalar> Net<'_, T> {
    fn var(&self, name: &str) -> Result<(usize, Var)> {
        let k = self
            .p
            .index_of(name)
            .ok_or_else(|| Error::Missing(format!("tensor {name}")))?;
        Ok((k, self.params[k]))
    }

    fn bn(&mut self, x: Var, name: &str) -> Result<Var> {
        let (gk, gamma) = self.var(&format!("{name}.gamma"))?;
        let (_, beta) = self.var(&format!("{name}.beta"))?;
        let (mk, _) = self.var(&format!("{name}.running_mean"))?;
        let eval = match self.mode {
            Mode::Eval => true,
            Mode::Train(Some(mask)) => !mask[gk],
            Mode::Train(None) => false,
        };
        let mode = if eval {
            BnMode::Eval {
                mean: self.p.tensors[mk].data.clone(),
                var: self.p.tensors[mk + 1].data.clone(),
            }
        } else {
            BnMode::Train
        };
        let (y, stats) = self.tape.batch_norm(x, gamma, beta, mode)?;
        if let Some(s) = stats {
            self.stats.push((mk, s));
        }
        Ok(y)
    }

    fn conv_bn_relu(&mut self, x: Var, name: &str, stride: usize) -> Result<Var> {
        let (_, w) = self.var(&format!("{name}.conv.w"))?;
        let y = self.tape.conv2d(x, w, None, stride)?;
        let y = self.bn(y, &format!("{name}.bn"))?;
        Ok(self.tape.relu(y))
    }

    fn res(&mut self, x: Var, name: &str) -> Result<Var> {
        let (_, w1) = self.var(&format!("{name}.conv1.w"))?;
        let y = self.tape.conv2d(x, w1, None, 1)?;
        let y = self.bn(y, &format!("{name}.bn1"))?;
        let y = self.tape.relu(y);
        let (_, w2) = self.var(&format!("{name}.conv2.w"))?;
        let y = self.tape.conv2d(y, w2, None, 1)?;
        let y = self.bn(y, &format!("{name}.bn2"))?;
        let short = match self.p.index_of(&format!("{name}.proj.w")) {
            Some(k) => {
                let (_, b) = self.var(&format!("{name}.proj.b"))?;
                self.tape.conv2d(x, self.params[k], Some(b), 1)?
            }
            None => x,
        };
        let s = self.tape.add(y, short)?;
        Ok(self.tape.relu(s))
    }

    fn up(&mut self, x: Var, skip: Var, name: &str, dec: &str) -> Result<Var> {
        let (_, _, h, w) = self.tape.value(skip).dims4();
        let u = self.tape.upsample2(x, h, w)?;
        let u = self.conv_bn_relu(u, name, 1)?;
        let cat = self.tape.concat(u, skip)?;
        self.res(cat, dec)
    }

    fn run(&mut self, x: Var) -> Result<Var> {
        let s = self.conv_bn_relu(x, "stem", 1)?;
        let e1 = self.res(s, "enc1")?;
        let d = self.conv_bn_relu(e1, "down1", 2)?;
        let e2 = self.res(d, "enc2")?;
        let d = self.conv_bn_relu(e2, "down2", 2)?;
        let e3 = self.res(d, "enc3")?;
        let d = self.conv_bn_relu(e3, "down3", 2)?;
        let b = self.res(d, "bottleneck")?;
        let y = self.up(b, e3, "up3", "dec3")?;
        let y = self.up(y, e2, "up2", "dec2")?;
        let y = self.up(y, e1, "up1", "dec1")?;
        let (_, hw) = self.var("head.w")?;
        let (_, hb) = self.var("head.b")?;
        self.tape.conv2d(y, hw, Some(hb), 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        Tensor::new(vec![n, c, h, w], (0..n * c * h * w).map(|_| d.sample(&mut r)).collect()).unwrap()
    }

    #[test]
    fn spatial_dims_preserved() {
        let p = ResUnetParams::<f32>::init(Arch::new(Task::Clp, 23), 1);
        for (h, w) in [(64, 64), (16, 24), (20, 12)] {
            let y = p.predict(input(1, 23, h, w, 2)).unwrap();
            assert_eq!(y.shape, vec![1, 3, h, w]);
        }
        let q = ResUnetParams::<f32>::init(Arch::new(Task::Cot, 24), 1);
        assert_eq!(q.predict(input(2, 24, 16, 16, 3)).unwrap().shape, vec![2, 1, 16, 16]);
        assert!(matches!(q.predict(input(1, 23, 16, 16, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_of_logits_sums_to_one() {
        let p = ResUnetParams::<f32>::init(Arch::new(Task::Clp, 23), 5);
        let y = p.predict(input(1, 23, 16, 16, 6)).unwrap();
        for px in 0..256 {
            let l: Vec<f64> = (0..3).map(|c| y.data[c * 256 + px] as f64).collect();
            let m = l.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = l.iter().map(|v| (v - m).exp()).sum();
            let s: f64 = l.iter().map(|v| (v - m).exp() / z).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_mode_is_per_sample() {
        let p = ResUnetParams::<f32>::init(Arch::new(Task::Cth, 24), 9);
        let a = input(1, 24, 16, 16, 10);
        let b = input(1, 24, 16, 16, 11);
        let ab = Tensor::new(vec![2, 24, 16, 16], [a.data.clone(), b.data.clone()].concat()).unwrap();
        let ba = Tensor::new(vec![2, 24, 16, 16], [b.data.clone(), a.data.clone()].concat()).unwrap();
        let yab = p.predict(ab).unwrap();
        let yba = p.predict(ba).unwrap();
        assert_eq!(yab.data[..256], yba.data[256..]);
        assert_eq!(yab.data[256..], yba.data[..256]);
        assert_eq!(p.predict(a).unwrap().data, yab.data[..256]);
    }

    #[test]
    fn freeze_policies() {
        let p = ResUnetParams::<f32>::init(Arch::new(Task::Clp, 23), 1);
        let all = p.trainable_mask(FreezePolicy::None);
        let enc = p.trainable_mask(FreezePolicy::Encoder);
        let head = p.trainable_mask(FreezePolicy::AllButHead);
        for (k, s) in p.specs.iter().enumerate() {
            assert_eq!(all[k], s.kind.learnable());
            let block = block_of(&s.name);
            let encoder = ENCODER_BLOCKS.contains(&block);
            assert_eq!(enc[k], s.kind.learnable() && !encoder, "{}", s.name);
            assert_eq!(head[k], block == "head");
        }
        assert!(enc[p.index_of("bottleneck.conv1.w").unwrap()]);
        assert!(enc[p.index_of("dec1.proj.w").unwrap()]);
        assert!(!enc[p.index_of("stem.conv.w").unwrap()]);
    }

    #[test]
    fn target_codec_round_trips() {
        let mut n = Normalization::identity(24, Task::Cot);
        n.target_mean = 0.7;
        n.target_std = 0.6;
        for v in [0.1, 3.0, 150.0] {
            assert!((n.decode_target(n.encode_target(v)) - v).abs() < 1e-9 * v);
        }
    }
}
