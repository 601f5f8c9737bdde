//! Analytic gradients against Richardson-extrapolated central differences
//! in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::resunet::{Mode, ResUnetParams};
use super::tape::Tape;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Draws rejected because a ReLU changed sign within ±epsilon, where the
    /// loss is not differentiable and finite differences are meaningless.
    pub skipped_kinks: usize,
    /// Draws whose analytic and numeric gradients were both below
    /// `abs_floor`, so no relative error is defined.
    pub skipped_tiny: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub n_params: usize,
    pub batch: usize,
    pub tile: usize,
    pub seed: u64,
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            n_params: 64,
            batch: 2,
            tile: 16,
            seed: 0,
            abs_floor: 1e-9,
        }
    }
}

struct Problem {
    x: Tensor<f64>,
    labels: Vec<u8>,
    target: Vec<f64>,
    mask: Vec<bool>,
}

fn loss_at(p: &ResUnetParams<f64>, pr: &Problem, backward: bool) -> Result<(f64, Vec<bool>, Option<Vec<Vec<f64>>>)> {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(pr.x.clone());
    let f = p.forward(&mut tape, x, Mode::Train(None))?;
    let l = if p.arch.task.is_classifier() {
        tape.cross_entropy_masked(f.out, &pr.labels, &pr.mask)?
    } else {
        tape.mse_masked(f.out, &pr.target, &pr.mask)?
    };
    let value = tape.value(l).data[0];
    let pattern = tape.relu_pattern();
    let grads = if backward {
        tape.backward(l)?;
        Some(f.params.iter().map(|&v| tape.grad(v).expect("after backward").to_vec()).collect())
    } else {
        None
    };
    Ok((value, pattern, grads))
}

/// Central difference in scalar `i` of tensor `k` with step `h`, or `None`
/// when the perturbation flips a ReLU.
fn central_difference(p: &ResUnetParams<f64>, pr: &Problem, pattern: &[bool], k: usize, i: usize, h: f64) -> Result<Option<f64>> {
    let mut plus = p.clone();
    plus.tensors[k].data[i] += h;
    let mut minus = p.clone();
    minus.tensors[k].data[i] -= h;
    let (lp, pp, _) = loss_at(&plus, pr, false)?;
    let (lm, pm, _) = loss_at(&minus, pr, false)?;
    if pp != pattern || pm != pattern {
        return Ok(None);
    }
    Ok(Some((lp - lm) / (2.0 * h)))
}

/// Compare back-propagated gradients with central differences on randomly
/// drawn learnable scalars of `model`, evaluated at 64-bit precision on a
/// random batch in training mode.
pub fn grad_check<T: Scalar>(model: &ResUnetParams<T>, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let p = model.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.batch * cfg.tile * cfg.tile;
    let c = p.arch.in_channels;
    let d = Normal::new(0.0, 1.0).expect("unit normal");
    let problem = Problem {
        x: Tensor::new(
            vec![cfg.batch, c, cfg.tile, cfg.tile],
            (0..n * c).map(|_| d.sample(&mut rng)).collect(),
        )?,
        labels: (0..n).map(|_| rng.random_range(0..3u8)).collect(),
        target: (0..n).map(|_| d.sample(&mut rng)).collect(),
        mask: (0..n).map(|_| rng.random_bool(0.7)).collect(),
    };
    let (_, base_pattern, grads) = loss_at(&p, &problem, true)?;
    let grads = grads.expect("requested");

    // Draw scalars uniformly over all learnable entries.
    let learnable: Vec<usize> = (0..p.specs.len()).filter(|&k| p.specs[k].kind.learnable()).collect();
    let sizes: Vec<usize> = learnable.iter().map(|&k| p.tensors[k].len()).collect();
    let total: usize = sizes.iter().sum();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        skipped_tiny: 0,
    };
    let max_draws = 50 * cfg.n_params.max(1);
    let mut draws = 0;
    while report.checked < cfg.n_params {
        if draws == max_draws {
            return Err(Error::Numeric(format!(
                "gradient check found only {} differentiable samples in {max_draws} draws",
                report.checked
            )));
        }
        draws += 1;
        let mut r = rng.random_range(0..total);
        let mut slot = 0;
        while r >= sizes[slot] {
            r -= sizes[slot];
            slot += 1;
        }
        let (k, i) = (learnable[slot], r);
        let Some(full) = central_difference(&p, &problem, &base_pattern, k, i, cfg.epsilon)? else {
            report.skipped_kinks += 1;
            continue;
        };
        let Some(half) = central_difference(&p, &problem, &base_pattern, k, i, cfg.epsilon / 2.0)? else {
            report.skipped_kinks += 1;
            continue;
        };
        // Richardson extrapolation cancels the O(ε²) truncation term, which
        // otherwise dominates for scalars with tiny gradients.
        let numeric = (4.0 * half - full) / 3.0;
        let analytic = grads[k][i];
        let scale = numeric.abs().max(analytic.abs());
        if scale < cfg.abs_floor {
            report.skipped_tiny += 1;
            continue;
        }
        let rel = (numeric - analytic).abs() / scale;
        log::debug!("{}[{i}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}", p.specs[k].name);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
