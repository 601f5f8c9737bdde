//! Toy thermal-infrared forward model.
//!
//! Each band sees a single cloud layer over a partially absorbing clear
//! column:
//!
//! ```text
//! BT_clear = SKT - a * TCWV
//! eps      = 1 - exp(-k * COT / mu),   mu = cos(view zenith)
//! BT       = eps * Tc + (1 - eps) * BT_clear
//! ```
//!
//! Emissivity saturates for thick clouds, so brightness temperatures stop
//! carrying information about COT beyond a few tens.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::field::{mix_seed, rng};
use super::truth::SceneTruth;
use crate::error::{ensure, Error, Result};
use crate::geo::Raster;

/// Band centers, μm, in stack order.
pub const BT_BANDS_UM: [&str; 6] = ["6.25", "7.1", "8.5", "10.8", "12.0", "13.5"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardCoeffs {
    /// Cloud absorption coefficient per band.
    pub k: [f64; 6],
    /// Water-vapour attenuation per band, K per kg/m².
    pub a: [f64; 6],
}

impl Default for ForwardCoeffs {
    fn default() -> Self {
        Self {
            k: [0.15, 0.18, 0.45, 0.60, 0.55, 0.35],
            a: [1.2, 1.0, 0.5, 0.3, 0.45, 0.7],
        }
    }
}

/// Noise-free brightness temperature of one band at one pixel.
#[inline]
pub(crate) fn band_bt(skt: f64, tcwv: f64, tc: f64, cot: f64, mu: f64, k: f64, a: f64) -> f64 {
    let clear = skt - a * tcwv;
    let eps = 1.0 - (-k * cot / mu).exp();
    eps * tc + (1.0 - eps) * clear
}

/// Simulate the six brightness-temperature bands with additive Gaussian
/// noise (`noise_sigma` K, deterministic per seed).
pub fn forward_bt(
    truth: &SceneTruth,
    view_zenith: &Raster,
    coeffs: &ForwardCoeffs,
    noise_sigma: f64,
    seed: u64,
) -> Result<[Raster; 6]> {
    let g = *truth.grid();
    g.check_same(view_zenith.grid(), "forward model view zenith")?;
    ensure!(
        coeffs.k.iter().chain(&coeffs.a).all(|&c| c > 0.0),
        InvalidArgument,
        "forward-model coefficients must be positive"
    );
    ensure!(noise_sigma >= 0.0, InvalidArgument, "noise sigma must be non-negative");
    for (k, v) in view_zenith.values().iter().enumerate() {
        if view_zenith.valid()[k] && v.to_radians().cos() <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "view zenith {v} deg gives a non-positive path cosine"
            )));
        }
    }

    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let bands: Vec<Raster> = (0..6)
        .map(|b| {
            let mut r = rng(mix_seed(seed, 100 + b as u64));
            let (kb, ab) = (coeffs.k[b], coeffs.a[b]);
            Raster::from_fn(g, |i, j| {
                // Draw for every pixel so the noise sequence does not depend
                // on validity.
                let e = if noise_sigma > 0.0 { noise.sample(&mut r) } else { 0.0 };
                let vz = view_zenith.get(i, j)?;
                let mu = vz.to_radians().cos();
                let skt = truth.skt.get(i, j)?;
                let tcwv = truth.tcwv.get(i, j)?;
                let bt = match (truth.cth.get(i, j), truth.cot.get(i, j)) {
                    (Some(h), Some(cot)) => {
                        let tc = skt - truth.lapse_rate * h;
                        band_bt(skt, tcwv, tc, cot, mu, kb, ab)
                    }
                    _ => skt - ab * tcwv,
                };
                Some(bt + e)
            })
        })
        .collect();
    Ok(bands.try_into().expect("six bands"))
}
