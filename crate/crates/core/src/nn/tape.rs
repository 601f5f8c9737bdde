//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs to run backwards. Activations are `[N, C, H, W]`. Backward walks
//! the tape from the loss towards the leaves in reverse insertion order,
//! which fixes the summation order of every gradient.

use rayon::prelude::*;

use super::tensor::{matmul, Scalar, Tensor};
use crate::error::{ensure, Error, Result};
use crate::tiles::reflect_index;

pub const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics from a training-mode batch norm; `var` is unbiased.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum BnMode<T> {
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: Vec<T>, var: Vec<T> },
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Upsample(Var),
    Concat(Var, Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<u8>,
        mask: Vec<bool>,
        count: usize,
    },
    Mse {
        pred: Var,
        diff: Vec<T>,
        count: usize,
    },
    Sum {
        x: Var,
        scale: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Reflect-padded sampling positions for one spatial axis of a convolution.
struct AxisTaps {
    /// `taps[kk * out + o]` is the input index read by tap `kk` at output `o`.
    taps: Vec<usize>,
    out: usize,
}

impl AxisTaps {
    fn new(n: usize, k: usize, stride: usize) -> Self {
        let pad = k / 2;
        let out = (n + 2 * pad - k) / stride + 1;
        let mut taps = Vec::with_capacity(k * out);
        for kk in 0..k {
            for o in 0..out {
                taps.push(reflect_index((o * stride + kk) as isize - pad as isize, n));
            }
        }
        Self { taps, out }
    }
}

/// `Σ f(v)` in f64 over eight interleaved accumulators.
#[inline]
fn lane_sum<T: Scalar>(xs: &[T], f: impl Fn(T) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let rest = chunks.remainder();
    for ch in chunks {
        for l in 0..8 {
            acc[l] += f(ch[l]);
        }
    }
    let tail: f64 = rest.iter().map(|&v| f(v)).sum();
    acc.iter().sum::<f64>() + tail
}

/// Range of outputs `o` for which tap `kk` reads `o * stride + kk - pad`
/// without reflection, so rows can be copied as slices.
fn interior(t: &AxisTaps, n: usize, k: usize, kk: usize) -> (usize, usize) {
    let pad = k / 2;
    let lo = pad.saturating_sub(kk);
    let hi = (n + pad).saturating_sub(kk).min(t.out).max(lo);
    (lo, hi)
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, stride: usize, rt: &AxisTaps, ct: &AxisTaps, cols: &mut [T]) {
    let (ho, wo) = (rt.out, ct.out);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ho * wo;
                let cidx = &ct.taps[kx * wo..(kx + 1) * wo];
                let (lo, hi) = if stride == 1 { interior(ct, w, k, kx) } else { (0, 0) };
                for oy in 0..ho {
                    let src = &plane[rt.taps[ky * ho + oy] * w..][..w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    if hi > lo {
                        let s0 = cidx[lo];
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                        for o in (0..lo).chain(hi..wo) {
                            dst[o] = src[cidx[o]];
                        }
                    } else {
                        for (d, &ix) in dst.iter_mut().zip(cidx) {
                            *d = src[ix];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, stride: usize, rt: &AxisTaps, ct: &AxisTaps, dx: &mut [T]) {
    let (ho, wo) = (rt.out, ct.out);
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ho * wo;
                let cidx = &ct.taps[kx * wo..(kx + 1) * wo];
                let (lo, hi) = if stride == 1 { interior(ct, w, k, kx) } else { (0, 0) };
                for oy in 0..ho {
                    let base = rt.taps[ky * ho + oy] * w;
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[base..base + w];
                    if hi > lo {
                        let s0 = cidx[lo];
                        for (d, &g) in dst[s0..s0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
                            *d = *d + g;
                        }
                        for o in (0..lo).chain(hi..wo) {
                            dst[cidx[o]] = dst[cidx[o]] + src[o];
                        }
                    } else {
                        for (&g, &ix) in src.iter().zip(cidx) {
                            dst[ix] = dst[ix] + g;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    /// Sign pattern of every ReLU input, in tape order. Finite differences are
    /// only meaningful between points with identical patterns.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(x) = n.op {
                out.extend(self.nodes[x.0].value.data.iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    /// 2-D cross-correlation with a `1×1` or `3×3` kernel, reflect padding
    /// and stride 1 or 2.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4();
        let (f, wc, k, k2) = self.value(w).dims4();
        ensure!(wc == c, Shape, "conv weight expects {wc} input channels, got {c}");
        ensure!(k == k2 && (k == 1 || k == 3), Shape, "conv kernel must be 1×1 or 3×3, got {k}×{k2}");
        ensure!(stride == 1 || stride == 2, InvalidArgument, "stride must be 1 or 2");
        if let Some(b) = b {
            ensure!(self.value(b).shape == [f], Shape, "conv bias must have {f} entries");
        }
        let rt = AxisTaps::new(h, k, stride);
        let ct = AxisTaps::new(wd, k, stride);
        let (ho, wo) = (rt.out, ct.out);
        let ckk = c * k * k;
        let xs = &self.value(x).data;
        let ws = &self.value(w).data;
        let bias = b.map(|b| self.value(b).data.clone());
        let direct = k == 1 && stride == 1;
        let mut out = vec![T::zero(); n * f * ho * wo];
        out.par_chunks_mut(f * ho * wo).enumerate().for_each(|(s, o)| {
            let xn = &xs[s * c * h * wd..(s + 1) * c * h * wd];
            if direct {
                matmul(f, c, ho * wo, ws, false, xn, false, o, false);
            } else {
                let mut cols = vec![T::zero(); ckk * ho * wo];
                im2col(xn, c, h, wd, k, stride, &rt, &ct, &mut cols);
                matmul(f, ckk, ho * wo, ws, false, &cols, false, o, false);
            }
            if let Some(bias) = &bias {
                for (fi, plane) in o.chunks_mut(ho * wo).enumerate() {
                    for v in plane {
                        *v = *v + bias[fi];
                    }
                }
            }
        });
        let t = Tensor::new(vec![n, f, ho, wo], out)?;
        Ok(self.push(t, Op::Conv { x, w, b, stride }))
    }

    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<T>) -> Result<(Var, Option<BatchStats>)> {
        let (n, c, h, w) = self.value(x).dims4();
        ensure!(
            self.value(gamma).shape == [c] && self.value(beta).shape == [c],
            Shape,
            "batch-norm scale/offset must have {c} entries"
        );
        let hw = h * w;
        let m = n * hw;
        let xs = &self.value(x).data;
        let (mean, inv_std, stats, train) = match mode {
            BnMode::Train => {
                ensure!(n >= 2, InvalidArgument, "training-mode batch norm needs a batch of at least 2, got {n}");
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for s_ in 0..n {
                        s += lane_sum(&xs[(s_ * c + ci) * hw..][..hw], |v| v.as_f64());
                    }
                    let mu = s / m as f64;
                    let mut q = 0.0;
                    for s_ in 0..n {
                        q += lane_sum(&xs[(s_ * c + ci) * hw..][..hw], |v| {
                            let d = v.as_f64() - mu;
                            d * d
                        });
                    }
                    mean[ci] = mu;
                    var[ci] = q / m as f64;
                }
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let unbiased = var.iter().map(|v| v * m as f64 / (m as f64 - 1.0)).collect();
                (mean.clone(), inv, Some(BatchStats { mean, var: unbiased }), true)
            }
            BnMode::Eval { mean, var } => {
                ensure!(mean.len() == c && var.len() == c, Shape, "running statistics must have {c} entries");
                let inv = var.iter().map(|v| 1.0 / (v.as_f64() + BN_EPS).sqrt()).collect();
                (mean.iter().map(|v| v.as_f64()).collect(), inv, None, false)
            }
        };
        let g = &self.value(gamma).data;
        let bt = &self.value(beta).data;
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for s in 0..n {
            for ci in 0..c {
                let base = (s * c + ci) * hw;
                let (mu, is) = (T::of_f64(mean[ci]), T::of_f64(inv_std[ci]));
                for k in base..base + hw {
                    let xh = (xs[k] - mu) * is;
                    xhat[k] = xh;
                    out[k] = g[ci] * xh + bt[ci];
                }
            }
        }
        let t = Tensor::new(vec![n, c, h, w], out)?;
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let t = Tensor {
            shape: src.shape.clone(),
            data,
            grad: None,
        };
        self.push(t, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure!(ta.shape == tb.shape, Shape, "add of {:?} and {:?}", ta.shape, tb.shape);
        let data = ta.data.iter().zip(&tb.data).map(|(&p, &q)| p + q).collect();
        let t = Tensor::new(ta.shape.clone(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Nearest-neighbour ×2 upsampling cropped to `h × w`.
    pub fn upsample2(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c, hi, wi) = self.value(x).dims4();
        ensure!(
            h <= 2 * hi && w <= 2 * wi && h >= 1 && w >= 1,
            Shape,
            "cannot upsample {hi}×{wi} to {h}×{w}"
        );
        let xs = &self.value(x).data;
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            let plane = &xs[p * hi * wi..(p + 1) * hi * wi];
            for i in 0..h {
                let row = &plane[(i / 2) * wi..];
                out.extend((0..w).map(|j| row[j / 2]));
            }
        }
        let t = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(t, Op::Upsample(x)))
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4();
        let (nb, cb, hb, wb) = self.value(b).dims4();
        ensure!(n == nb && h == hb && w == wb, Shape, "concat of mismatched activations");
        let (xa, xb) = (&self.value(a).data, &self.value(b).data);
        let mut out = Vec::with_capacity(n * (ca + cb) * h * w);
        for s in 0..n {
            out.extend_from_slice(&xa[s * ca * h * w..(s + 1) * ca * h * w]);
            out.extend_from_slice(&xb[s * cb * h * w..(s + 1) * cb * h * w]);
        }
        let t = Tensor::new(vec![n, ca + cb, h, w], out)?;
        Ok(self.push(t, Op::Concat(a, b)))
    }

    /// Mean cross-entropy of `logits [N,K,H,W]` over the pixels where `mask`
    /// is set.
    pub fn cross_entropy_masked(&mut self, logits: Var, labels: &[u8], mask: &[bool]) -> Result<Var> {
        let (n, k, h, w) = self.value(logits).dims4();
        let hw = h * w;
        ensure!(
            labels.len() == n * hw && mask.len() == n * hw,
            Shape,
            "labels/mask must have {} entries",
            n * hw
        );
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Empty("cross-entropy mask selects no pixels".into()));
        }
        let xs = &self.value(logits).data;
        let mut probs = vec![T::zero(); xs.len()];
        let mut total = 0.0f64;
        for s in 0..n {
            for p in 0..hw {
                let at = |c: usize| (s * k + c) * hw + p;
                let mx = (0..k).map(|c| xs[at(c)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for c in 0..k {
                    let e = (xs[at(c)] - mx).exp();
                    probs[at(c)] = e;
                    z = z + e;
                }
                for c in 0..k {
                    probs[at(c)] = probs[at(c)] / z;
                }
                let q = s * hw + p;
                if mask[q] {
                    let y = labels[q] as usize;
                    ensure!(y < k, InvalidArgument, "label {y} outside {k} classes");
                    total += (mx.as_f64() + z.as_f64().ln()) - xs[at(y)].as_f64();
                }
            }
        }
        let t = Tensor::new(vec![], vec![T::of_f64(total / count as f64)])?;
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                count,
            },
        ))
    }

    /// Mean squared error over the pixels where `mask` is set.
    pub fn mse_masked(&mut self, pred: Var, target: &[T], mask: &[bool]) -> Result<Var> {
        let ps = &self.value(pred).data;
        ensure!(
            target.len() == ps.len() && mask.len() == ps.len(),
            Shape,
            "target/mask must have {} entries",
            ps.len()
        );
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Empty("MSE mask selects no pixels".into()));
        }
        let diff: Vec<T> = ps
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((&p, &t), &m)| if m { p - t } else { T::zero() })
            .collect();
        let total: f64 = diff.iter().map(|d| d.as_f64() * d.as_f64()).sum();
        let t = Tensor::new(vec![], vec![T::of_f64(total / count as f64)])?;
        Ok(self.push(t, Op::Mse { pred, diff, count }))
    }

    /// `scale · Σ x`.
    pub fn sum(&mut self, x: Var, scale: T) -> Var {
        let s: f64 = self.value(x).data.iter().map(|v| v.as_f64()).sum();
        let t = Tensor {
            shape: vec![],
            data: vec![scale * T::of_f64(s)],
            grad: None,
        };
        self.push(t, Op::Sum { x, scale })
    }

    /// Back-propagate from the scalar `loss`; gradients land in each node's
    /// `grad` field (zero for nodes the loss does not depend on).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        ensure!(self.value(loss).data.len() == 1, Shape, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.grad = Some(g.unwrap_or_else(|| vec![T::zero(); node.value.data.len()]));
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, delta: Vec<T>| match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e = *e + d;
                }
            }
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Relu(x) => {
                let xs = &self.value(*x).data;
                acc(*x, g.iter().zip(xs).map(|(&gi, &v)| if v > T::zero() { gi } else { T::zero() }).collect());
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sum { x, scale } => {
                acc(*x, vec![g[0] * *scale; self.value(*x).data.len()]);
            }
            Op::Mse { pred, diff, count } => {
                let s = g[0] * T::of_f64(2.0 / *count as f64);
                acc(*pred, diff.iter().map(|&d| d * s).collect());
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
                mask,
                count,
            } => {
                let (n, k, h, w) = self.value(*logits).dims4();
                let hw = h * w;
                let s = g[0] / T::of_f64(*count as f64);
                let mut d = vec![T::zero(); probs.len()];
                for sm in 0..n {
                    for p in 0..hw {
                        if !mask[sm * hw + p] {
                            continue;
                        }
                        let y = labels[sm * hw + p] as usize;
                        for c in 0..k {
                            let at = (sm * k + c) * hw + p;
                            let onehot = if c == y { T::one() } else { T::zero() };
                            d[at] = (probs[at] - onehot) * s;
                        }
                    }
                }
                acc(*logits, d);
            }
            Op::Upsample(x) => {
                let (n, c, hi, wi) = self.value(*x).dims4();
                let (_, _, h, w) = node.value.dims4();
                let mut d = vec![T::zero(); n * c * hi * wi];
                for p in 0..n * c {
                    for i in 0..h {
                        for j in 0..w {
                            let t = p * hi * wi + (i / 2) * wi + j / 2;
                            d[t] = d[t] + g[(p * h + i) * w + j];
                        }
                    }
                }
                acc(*x, d);
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = self.value(*a).dims4();
                let cb = self.value(*b).shape[1];
                let (pa, pb) = (ca * h * w, cb * h * w);
                let mut da = Vec::with_capacity(n * pa);
                let mut db = Vec::with_capacity(n * pb);
                for s in 0..n {
                    let chunk = &g[s * (pa + pb)..(s + 1) * (pa + pb)];
                    da.extend_from_slice(&chunk[..pa]);
                    db.extend_from_slice(&chunk[pa..]);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let hw = h * w;
                let m = (n * hw) as f64;
                let gm = &self.value(*gamma).data;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); n * c * hw];
                for ci in 0..c {
                    let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                    for s in 0..n {
                        let base = (s * c + ci) * hw;
                        let (gs, xh) = (&g[base..base + hw], &xhat[base..base + hw]);
                        sg += lane_sum(gs, |v| v.as_f64());
                        let mut acc = [0.0f64; 8];
                        for (k, (&a, &b)) in gs.iter().zip(xh).enumerate() {
                            acc[k & 7] += a.as_f64() * b.as_f64();
                        }
                        sgx += acc.iter().sum::<f64>();
                    }
                    dgamma[ci] = T::of_f64(sgx);
                    dbeta[ci] = T::of_f64(sg);
                    let gi = T::of_f64(gm[ci].as_f64() * inv_std[ci]);
                    let (mg, mgx) = if *train {
                        (T::of_f64(sg / m), T::of_f64(sgx / m))
                    } else {
                        (T::zero(), T::zero())
                    };
                    for s in 0..n {
                        let base = (s * c + ci) * hw;
                        for k in base..base + hw {
                            dx[k] = gi * (g[k] - mg - xhat[k] * mgx);
                        }
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Conv { x, w, b, stride } => {
                let (n, c, h, wd) = self.value(*x).dims4();
                let (f, _, k, _) = self.value(*w).dims4();
                let rt = AxisTaps::new(h, k, *stride);
                let ct = AxisTaps::new(wd, k, *stride);
                let howo = rt.out * ct.out;
                let ckk = c * k * k;
                let xs = &self.value(*x).data;
                let ws = &self.value(*w).data;
                let direct = k == 1 && *stride == 1;
                let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..n)
                    .into_par_iter()
                    .map(|s| {
                        let xn = &xs[s * c * h * wd..(s + 1) * c * h * wd];
                        let gn = &g[s * f * howo..(s + 1) * f * howo];
                        let mut dw = vec![T::zero(); f * ckk];
                        let mut dx = vec![T::zero(); c * h * wd];
                        if direct {
                            matmul(f, howo, c, gn, false, xn, true, &mut dw, false);
                            matmul(c, f, howo, ws, true, gn, false, &mut dx, false);
                        } else {
                            let mut cols = vec![T::zero(); ckk * howo];
                            im2col(xn, c, h, wd, k, *stride, &rt, &ct, &mut cols);
                            matmul(f, howo, ckk, gn, false, &cols, true, &mut dw, false);
                            matmul(ckk, f, howo, ws, true, gn, false, &mut cols, false);
                            col2im(&cols, c, h, wd, k, *stride, &rt, &ct, &mut dx);
                        }
                        (dx, dw)
                    })
                    .collect();
                let mut dw = vec![T::zero(); f * ckk];
                let mut dx = Vec::with_capacity(n * c * h * wd);
                for (dxn, dwn) in per_sample {
                    dx.extend_from_slice(&dxn);
                    for (a, b) in dw.iter_mut().zip(dwn) {
                        *a = *a + b;
                    }
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); f];
                    for s in 0..n {
                        for (fi, d) in db.iter_mut().enumerate() {
                            let plane = &g[(s * f + fi) * howo..(s * f + fi + 1) * howo];
                            *d = *d + plane.iter().copied().sum::<T>();
                        }
                    }
                    acc(*b, db);
                }
                acc(*x, dx);
                acc(*w, dw);
            }
        }
    }
}
