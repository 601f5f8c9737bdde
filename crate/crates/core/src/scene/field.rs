//! Spectrally synthesized Gaussian random fields.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{ensure, Result};
use crate::geo::{GeoGrid, Raster};

/// SplitMix64 step, used to derive independent sub-seeds from one seed.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Zero-mean, unit-variance (times `amplitude`) periodic random field with a
/// power-law spectrum: white noise shaped by `k^(-beta/2)` in Fourier space.
/// `beta = 0` is white noise; larger values give smoother fields.
pub fn gaussian_field(seed: u64, grid: &GeoGrid, beta: f64, amplitude: f64) -> Result<Raster> {
    ensure!(
        (0.0..=5.0).contains(&beta),
        InvalidArgument,
        "spectral exponent {beta} outside [0, 5]"
    );
    let values = gaussian_values(seed, grid.nrows, grid.ncols, beta, amplitude);
    Raster::from_values(*grid, values)
}

pub(crate) fn gaussian_values(seed: u64, nrows: usize, ncols: usize, beta: f64, amplitude: f64) -> Vec<f64> {
    let n = nrows * ncols;
    let mut r = rng(seed);
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(&mut r), 0.0))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    fft2(&mut planner, &mut buf, nrows, ncols, false);

    let freq = |k: usize, len: usize| -> f64 {
        let k = k.min(len - k) as f64;
        k / len as f64
    };
    for i in 0..nrows {
        let fy = freq(i, nrows);
        for j in 0..ncols {
            let fx = freq(j, ncols);
            let k = (fx * fx + fy * fy).sqrt();
            let w = if k == 0.0 { 0.0 } else { k.powf(-beta / 2.0) };
            buf[i * ncols + j] *= w;
        }
    }
    fft2(&mut planner, &mut buf, nrows, ncols, true);

    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { amplitude / var.sqrt() } else { 0.0 };
    for v in &mut out {
        *v = (*v - mean) * scale;
    }
    out
}

fn fft2(planner: &mut FftPlanner<f64>, buf: &mut [Complex<f64>], nrows: usize, ncols: usize, inverse: bool) {
    let row_fft = if inverse {
        planner.plan_fft_inverse(ncols)
    } else {
        planner.plan_fft_forward(ncols)
    };
    for row in buf.chunks_exact_mut(ncols) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(nrows)
    } else {
        planner.plan_fft_forward(nrows)
    };
    let mut col = vec![Complex::new(0.0, 0.0); nrows];
    for j in 0..ncols {
        for i in 0..nrows {
            col[i] = buf[i * ncols + j];
        }
        col_fft.process(&mut col);
        for i in 0..nrows {
            buf[i * ncols + j] = col[i];
        }
    }
}
