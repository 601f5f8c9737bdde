use rand::Rng;
use serde::{Deserialize, Serialize};

use super::field::{gaussian_values, mix_seed, rng};
use super::{CLEAR, ICE, WATER};
use crate::error::{ensure, Result};
use crate::geo::{GeoGrid, Raster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthParams {
    /// Fraction of cloudy pixels, in (0, 1).
    pub cloud_fraction: f64,
    /// K/km.
    pub lapse_rate: f64,
    /// Cloud-top temperature below which the phase is ice, K.
    pub ice_threshold_k: f64,
    /// Spectral exponent of the cloud field; larger is smoother.
    pub cloud_beta: f64,
    /// Spectral exponent of the auxiliary fields.
    pub aux_beta: f64,
}

impl Default for TruthParams {
    fn default() -> Self {
        Self {
            cloud_fraction: 0.6,
            lapse_rate: 6.5,
            ice_threshold_k: 253.0,
            cloud_beta: 3.5,
            aux_beta: 3.5,
        }
    }
}

/// Ground-truth cloud and surface/atmosphere fields of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    /// Phase class codes 0/1/2, valid everywhere.
    pub clp: Raster,
    /// Cloud-top height, km; valid on cloudy pixels only.
    pub cth: Raster,
    /// Effective radius, μm; cloudy only.
    pub cer: Raster,
    /// Optical thickness; cloudy only.
    pub cot: Raster,
    /// Skin temperature, K.
    pub skt: Raster,
    /// Total column water vapour, kg/m².
    pub tcwv: Raster,
    /// Air temperature at 1000/850/500/300 hPa, K.
    pub atp: [Raster; 4],
    /// Relative humidity at the same levels, %.
    pub rhp: [Raster; 4],
    /// Surface emissivity per band.
    pub se: [Raster; 6],
    /// Lapse rate linking skin temperature and cloud-top temperature, K/km.
    pub lapse_rate: f64,
}

impl SceneTruth {
    pub fn grid(&self) -> &GeoGrid {
        self.clp.grid()
    }

    pub fn is_cloudy(&self, k: usize) -> bool {
        self.clp.values()[k] != CLEAR as f64
    }

    /// The truth as a fully covered label set.
    pub fn labels(&self) -> super::LabelSet {
        super::LabelSet {
            clp: self.clp.clone(),
            cth: self.cth.clone(),
            cer: self.cer.clone(),
            cot: self.cot.clone(),
            coverage: crate::geo::Mask::filled(*self.grid(), true),
        }
    }

    /// Cloud-top temperature raster, K (cloudy pixels only).
    pub fn cloud_top_temperature(&self) -> Raster {
        Raster::from_fn(*self.grid(), |i, j| {
            Some(cloud_top_temperature(self.skt.get(i, j)?, self.cth.get(i, j)?, self.lapse_rate))
        })
    }
}

#[inline]
pub fn cloud_top_temperature(skt: f64, cth_km: f64, lapse_rate: f64) -> f64 {
    skt - lapse_rate * cth_km
}

/// Ice below the glaciation threshold, water otherwise.
#[inline]
pub fn phase_from_tc(tc: f64, ice_threshold_k: f64) -> u8 {
    if tc < ice_threshold_k {
        ICE
    } else {
        WATER
    }
}

/// Ranks of `scores` scaled to (0, 1): `(rank + 0.5) / n`.
fn uniform_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for (rank, &k) in idx.iter().enumerate() {
        out[k] = (rank as f64 + 0.5) / n as f64;
    }
    out
}

#[inline]
fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-1.7 * z).exp())
}

const COT_MIN: f64 = 0.1;
const COT_MAX: f64 = 150.0;

/// Generate a scene's truth fields.
///
/// The cloud mask thresholds a smooth Gaussian field at the quantile giving
/// the requested cloud fraction. Optical thickness grows with the depth into
/// that field (log-uniform over cloudy pixels), so the interior of a cloud is
/// its optically thickest part.
pub fn gen_truth(seed: u64, grid: &GeoGrid, params: &TruthParams) -> Result<SceneTruth> {
    ensure!(
        params.cloud_fraction > 0.0 && params.cloud_fraction < 1.0,
        InvalidArgument,
        "cloud fraction {} outside (0, 1)",
        params.cloud_fraction
    );
    ensure!(
        grid.len() >= 4,
        InvalidArgument,
        "scene grid of {}x{} pixels is too small",
        grid.nrows,
        grid.ncols
    );
    let (nr, nc) = (grid.nrows, grid.ncols);
    let n = grid.len();
    let field = |tag: u64, beta: f64| gaussian_values(mix_seed(seed, tag), nr, nc, beta, 1.0);
    let mut scene_rng = rng(mix_seed(seed, 0));

    let cloud = field(1, params.cloud_beta);
    let n_cloudy = ((params.cloud_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut sorted = cloud.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[n - n_cloudy - 1];
    let cloudy: Vec<bool> = cloud.iter().map(|&g| g > threshold).collect();
    let cloudy_idx: Vec<usize> = (0..n).filter(|&k| cloudy[k]).collect();

    let cot_detail = field(2, 3.0);
    let cth_field = field(3, 3.0);
    let cer_field = field(4, 3.0);

    // Optical thickness: log-uniform in the within-cloud rank of the depth
    // score.
    let cot_score: Vec<f64> = cloudy_idx.iter().map(|&k| cloud[k] + 0.3 * cot_detail[k]).collect();
    let cot_u = uniform_ranks(&cot_score);
    // Heights: uniform in [1, 16] km over cloudy pixels, partly tied to the
    // cloud field so that thick clouds tend to be high.
    let cth_score: Vec<f64> = cloudy_idx.iter().map(|&k| 0.6 * cth_field[k] + 0.4 * cloud[k]).collect();
    let cth_u = uniform_ranks(&cth_score);

    let skt_offset: f64 = scene_rng.random_range(-12.0..12.0);
    let tcwv_offset: f64 = scene_rng.random_range(-10.0..10.0);
    let skt_f = field(5, params.aux_beta);
    let skt: Vec<f64> = skt_f.iter().map(|z| (285.0 + skt_offset + 7.0 * z).clamp(260.0, 310.0)).collect();
    let tcwv_f = field(6, params.aux_beta);
    let tcwv: Vec<f64> = tcwv_f.iter().map(|z| (25.0 + tcwv_offset + 10.0 * z).clamp(2.0, 70.0)).collect();

    let mut clp = vec![CLEAR as f64; n];
    let mut cth = vec![0.0; n];
    let mut cer = vec![0.0; n];
    let mut cot = vec![0.0; n];
    for (m, &k) in cloudy_idx.iter().enumerate() {
        let h = 1.0 + 15.0 * cth_u[m];
        let tc = cloud_top_temperature(skt[k], h, params.lapse_rate);
        let phase = phase_from_tc(tc, params.ice_threshold_k);
        let u = logistic(0.6 * cer_field[k] + 0.8 * (cth_u[m] - 0.5) * 2.0);
        let r = if phase == ICE { 15.0 + 30.0 * u } else { 5.0 + 20.0 * u };
        clp[k] = phase as f64;
        cth[k] = h;
        cer[k] = r;
        cot[k] = COT_MIN * (COT_MAX / COT_MIN).powf(cot_u[m]);
    }

    // Temperature profile anchored to the surface, strictly decreasing aloft.
    let atp_base = field(7, params.aux_beta);
    let lev_dz_km = [0.1, 1.5, 5.6, 9.2];
    let atp: Vec<Raster> = (0..4)
        .map(|l| {
            let pert = field(8 + l as u64, params.aux_beta);
            let v = (0..n)
                .map(|k| skt[k] - 1.0 + 1.5 * atp_base[k] - 6.5 * lev_dz_km[l] + 0.8 * pert[k])
                .collect();
            Raster::from_values(*grid, v)
        })
        .collect::<Result<_>>()?;

    let rhp: Vec<Raster> = (0..4)
        .map(|l| {
            let f = field(12 + l as u64, params.aux_beta);
            let v = (0..n)
                .map(|k| (55.0 + 15.0 * f[k] + 8.0 * cloud[k]).clamp(2.0, 100.0))
                .collect();
            Raster::from_values(*grid, v)
        })
        .collect::<Result<_>>()?;

    let se_base = field(16, params.aux_beta);
    let se_offset = [-0.04, -0.03, -0.03, 0.0, 0.02, 0.02];
    let se: Vec<Raster> = (0..6)
        .map(|b| {
            let f = field(17 + b as u64, params.aux_beta);
            let v = (0..n)
                .map(|k| (0.95 + se_offset[b] + 0.015 * se_base[k] + 0.005 * f[k]).clamp(0.8, 1.0))
                .collect();
            Raster::from_values(*grid, v)
        })
        .collect::<Result<_>>()?;

    let prop = |v: Vec<f64>| Raster::new(*grid, v, cloudy.clone());
    Ok(SceneTruth {
        clp: Raster::from_values(*grid, clp)?,
        cth: prop(cth)?,
        cer: prop(cer)?,
        cot: prop(cot)?,
        skt: Raster::from_values(*grid, skt)?,
        tcwv: Raster::from_values(*grid, tcwv)?,
        atp: atp.try_into().expect("four levels"),
        rhp: rhp.try_into().expect("four levels"),
        se: se.try_into().expect("six bands"),
        lapse_rate: params.lapse_rate,
    })
}
