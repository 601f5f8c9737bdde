//! Simulators for the three label sources: a dense but biased daytime
//! product, a sparse accurate swath product, and a 1-D reference track.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::field::{mix_seed, rng};
use super::{LabelSet, SceneTruth, CLEAR};
use crate::error::{ensure, Error, Result};
use crate::geo::{day_night_mask, sun_glint_angle, GeoAngles, Mask, Raster};

/// Systematic errors of the dense source product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceBias {
    /// CTH offset above `high_cloud_km`, km.
    pub dcth_high_km: f64,
    /// CTH offset at or below `high_cloud_km`, km.
    pub dcth_low_km: f64,
    pub high_cloud_km: f64,
    pub fcer: f64,
    pub fcot: f64,
}

impl Default for SourceBias {
    fn default() -> Self {
        Self {
            dcth_high_km: -0.8,
            dcth_low_km: 0.4,
            high_cloud_km: 8.0,
            fcer: 1.15,
            fcot: 1.20,
        }
    }
}

impl SourceBias {
    pub fn cth(&self, h: f64) -> f64 {
        let d = if h > self.high_cloud_km { self.dcth_high_km } else { self.dcth_low_km };
        (h + d).max(0.0)
    }
}

/// Dense labels on daytime pixels outside the sun-glint zone, with the
/// configured biases applied.
pub fn simulate_source_labels(
    truth: &SceneTruth,
    angles: &GeoAngles,
    bias: &SourceBias,
    glint_cutoff_deg: f64,
    day_threshold_deg: f64,
) -> Result<LabelSet> {
    let g = *truth.grid();
    g.check_same(angles.grid(), "source labels")?;
    let glint = sun_glint_angle(angles)?;
    let day = day_night_mask(&angles.solar_zenith, day_threshold_deg);
    let coverage = Mask::from_fn(g, |i, j| {
        day.get(i, j) && glint.get(i, j).is_some_and(|a| a > glint_cutoff_deg)
    });
    let on = |i: usize, j: usize| coverage.get(i, j);
    Ok(LabelSet {
        clp: Raster::from_fn(g, |i, j| if on(i, j) { truth.clp.get(i, j) } else { None }),
        cth: Raster::from_fn(g, |i, j| on(i, j).then(|| truth.cth.get(i, j).map(|h| bias.cth(h))).flatten()),
        cer: Raster::from_fn(g, |i, j| on(i, j).then(|| truth.cer.get(i, j).map(|r| r * bias.fcer)).flatten()),
        cot: Raster::from_fn(g, |i, j| on(i, j).then(|| truth.cot.get(i, j).map(|c| c * bias.fcot)).flatten()),
        coverage,
    })
}

/// Vertical band of columns covered by the polar-orbiter swath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Swath {
    pub center_col: usize,
    pub width_px: usize,
}

impl Swath {
    /// Covered columns, clipped to `ncols`.
    pub fn columns(&self, ncols: usize) -> std::ops::Range<usize> {
        let start = self.center_col.saturating_sub(self.width_px / 2);
        let end = (start + self.width_px).min(ncols);
        start.min(ncols)..end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetNoise {
    pub cth_km: f64,
    pub cer_um: f64,
    /// Relative COT noise.
    pub cot_rel: f64,
}

impl Default for TargetNoise {
    fn default() -> Self {
        Self {
            cth_km: 0.2,
            cer_um: 0.5,
            cot_rel: 0.02,
        }
    }
}

/// Unbiased labels with small Gaussian noise, inside the swath only.
pub fn simulate_target_labels(
    truth: &SceneTruth,
    swath: Swath,
    noise: &TargetNoise,
    seed: u64,
) -> Result<LabelSet> {
    ensure!(swath.width_px >= 1, InvalidArgument, "swath width must be at least 1 pixel");
    let g = *truth.grid();
    let cols = swath.columns(g.ncols);
    let coverage = Mask::from_fn(g, |_, j| cols.contains(&j));
    let mut r = rng(mix_seed(seed, 200));
    let mut draw = || -> f64 { StandardNormal.sample(&mut r) };

    let n = g.len();
    let mut cth = vec![None; n];
    let mut cer = vec![None; n];
    let mut cot = vec![None; n];
    for i in 0..g.nrows {
        for j in 0..g.ncols {
            let k = i * g.ncols + j;
            // Fixed number of draws per pixel keeps noise aligned across configs.
            let (e1, e2, e3) = (draw(), draw(), draw());
            if !coverage.get(i, j) {
                continue;
            }
            cth[k] = truth.cth.get(i, j).map(|h| (h + noise.cth_km * e1).max(0.05));
            cer[k] = truth.cer.get(i, j).map(|v| (v + noise.cer_um * e2).max(0.5));
            cot[k] = truth.cot.get(i, j).map(|c| (c * (1.0 + noise.cot_rel * e3)).max(0.01));
        }
    }
    let build = |v: Vec<Option<f64>>| {
        let mut it = v.into_iter();
        Raster::from_fn(g, |_, _| it.next().flatten())
    };
    Ok(LabelSet {
        clp: Raster::from_fn(g, |i, j| if coverage.get(i, j) { truth.clp.get(i, j) } else { None }),
        cth: build(cth),
        cer: build(cer),
        cot: build(cot),
        coverage,
    })
}

/// One reference-lidar sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub lat: f64,
    pub lon: f64,
    /// UTC seconds.
    pub time: i64,
    pub clp: u8,
    /// Cloud-top height, km; absent for clear samples.
    pub cth: Option<f64>,
}

/// Sample the truth at each path point's nearest pixel.
pub fn simulate_track(truth: &SceneTruth, path: &[(f64, f64)], time: i64) -> Result<Vec<TrackSample>> {
    let g = truth.grid();
    path.iter()
        .map(|&(lat, lon)| {
            let (i, j) = g.locate(lat, lon).ok_or_else(|| {
                Error::InvalidArgument(format!("track point ({lat}, {lon}) lies outside the scene grid"))
            })?;
            let clp = truth.clp.get(i, j).map(|c| c as u8).unwrap_or(CLEAR);
            Ok(TrackSample {
                lat,
                lon,
                time,
                clp,
                cth: truth.cth.get(i, j),
            })
        })
        .collect()
}

/// Near-meridional ground track across the scene, one point per row.
pub fn track_path(grid: &crate::geo::GeoGrid, seed: u64) -> Vec<(f64, f64)> {
    use rand::Rng;
    let mut r = rng(mix_seed(seed, 300));
    let c0: f64 = r.random_range(0.2..0.8) * grid.ncols as f64;
    // A few columns of drift over the scene height.
    let slope: f64 = r.random_range(-0.15..0.15);
    (0..grid.nrows)
        .filter_map(|i| {
            let c = (c0 + slope * i as f64).round();
            if c < 0.0 || c >= grid.ncols as f64 {
                return None;
            }
            Some((grid.center_lat(i), grid.center_lon(c as usize)))
        })
        .collect()
}
