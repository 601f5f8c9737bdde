//! Cloud climatology over a time series of retrievals: phase fractions,
//! mean property maps, ISCCP cloud types and diurnal cycles.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::eval::Season;
use crate::geo::{GeoGrid, Mask, Raster};
use crate::scene::{LabelSet, Property, ICE, WATER};

/// Retrievals on one grid in strictly increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    steps: Vec<(i64, LabelSet)>,
}

impl TimeSeries {
    pub fn new(steps: Vec<(i64, LabelSet)>) -> Result<Self> {
        ensure!(!steps.is_empty(), Empty, "time series has no steps");
        let g = *steps[0].1.grid();
        for w in steps.windows(2) {
            ensure!(
                w[1].0 > w[0].0,
                InvalidArgument,
                "timestamps must increase strictly ({} follows {})",
                w[1].0,
                w[0].0
            );
        }
        for (t, l) in &steps {
            g.check_same(l.grid(), &format!("series step {t}"))?;
        }
        Ok(Self { steps })
    }

    pub fn grid(&self) -> &GeoGrid {
        self.steps[0].1.grid()
    }

    pub fn steps(&self) -> &[(i64, LabelSet)] {
        &self.steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSelect {
    Total,
    Water,
    Ice,
}

impl PhaseSelect {
    fn hit(self, code: u8) -> bool {
        match self {
            PhaseSelect::Total => code == WATER || code == ICE,
            PhaseSelect::Water => code == WATER,
            PhaseSelect::Ice => code == ICE,
        }
    }
}

fn in_mask(mask: Option<&Mask>, k: usize) -> bool {
    mask.is_none_or(|m| m.data()[k])
}

/// Percentage of valid steps with the selected phase, per pixel. Pixels
/// without any valid step or outside `mask` are invalid.
pub fn cloud_fraction(series: &TimeSeries, which: PhaseSelect, mask: Option<&Mask>) -> Result<Raster> {
    let g = *series.grid();
    if let Some(m) = mask {
        m.grid().check_same(&g, "cloud fraction mask")?;
    }
    let mut valid = vec![0u32; g.len()];
    let mut hits = vec![0u32; g.len()];
    for (_, l) in series.steps() {
        for (k, (v, h)) in valid.iter_mut().zip(hits.iter_mut()).enumerate() {
            if let Some(c) = l.clp.at(k) {
                let c = c as u8;
                if c <= ICE {
                    *v += 1;
                    *h += which.hit(c) as u32;
                }
            }
        }
    }
    Ok(Raster::from_fn(g, |i, j| {
        let k = i * g.ncols + j;
        (valid[k] > 0 && in_mask(mask, k)).then(|| 100.0 * hits[k] as f64 / valid[k] as f64)
    }))
}

/// Mean of a property over the steps where it is valid, per pixel.
pub fn mean_property_map(series: &TimeSeries, property: Property, mask: Option<&Mask>) -> Result<Raster> {
    let g = *series.grid();
    if let Some(m) = mask {
        m.grid().check_same(&g, "property map mask")?;
    }
    let mut sum = vec![0.0; g.len()];
    let mut n = vec![0u32; g.len()];
    for (_, l) in series.steps() {
        let r = l.property(property);
        for k in 0..g.len() {
            if let Some(v) = r.at(k) {
                sum[k] += v;
                n[k] += 1;
            }
        }
    }
    Ok(Raster::from_fn(g, |i, j| {
        let k = i * g.ncols + j;
        (n[k] > 0 && in_mask(mask, k)).then(|| sum[k] / n[k] as f64)
    }))
}

/// Mean of the valid pixels of `r` inside `mask`, or `None`.
pub fn regional_mean(r: &Raster, mask: Option<&Mask>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for k in 0..r.values().len() {
        if in_mask(mask, k) {
            if let Some(v) = r.at(k) {
                s += v;
                n += 1;
            }
        }
    }
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtpMethod {
    /// International Standard Atmosphere with an isothermal layer above 11 km.
    #[default]
    Isa,
    /// The tropospheric lapse-rate formula at every height.
    ConstantLapse,
}

const P0_HPA: f64 = 1013.25;
const T0_K: f64 = 288.15;
const LAPSE_K_PER_M: f64 = 0.0065;
const ISA_EXPONENT: f64 = 5.2559;
const TROPOPAUSE_M: f64 = 11_000.0;
const TROPOPAUSE_HPA: f64 = 226.32;
const G0: f64 = 9.80665;
const R_DRY: f64 = 287.053;
const T_STRAT_K: f64 = 216.65;

/// Cloud-top pressure in hPa from cloud-top height in km (0 to 20).
pub fn cth_to_ctp(cth_km: f64, method: CtpMethod) -> Result<f64> {
    ensure!(
        (0.0..=20.0).contains(&cth_km),
        InvalidArgument,
        "cloud-top height {cth_km} km outside 0 to 20 km"
    );
    let h = cth_km * 1000.0;
    Ok(if h <= TROPOPAUSE_M || method == CtpMethod::ConstantLapse {
        P0_HPA * (1.0 - LAPSE_K_PER_M * h / T0_K).powf(ISA_EXPONENT)
    } else {
        TROPOPAUSE_HPA * (-(h - TROPOPAUSE_M) * G0 / (R_DRY * T_STRAT_K)).exp()
    })
}

/// The nine ISCCP cloud types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsccpClass {
    Cumulus,
    Stratocumulus,
    Stratus,
    Altocumulus,
    Altostratus,
    Nimbostratus,
    Cirrus,
    Cirrostratus,
    DeepConvection,
}

pub const HIGH_CTP_HPA: f64 = 440.0;
pub const LOW_CTP_HPA: f64 = 680.0;
pub const THIN_COT: f64 = 3.6;
pub const THICK_COT: f64 = 23.0;

/// Cloud type from pressure and optical thickness bands. A value on a band
/// boundary goes to the higher-pressure or lower-thickness side: 440 and
/// 680 hPa are middle and low level, COT 3.6 and 23 are thin and medium.
pub fn classify_isccp(ctp_hpa: f64, cot: f64) -> IsccpClass {
    use IsccpClass::*;
    let level = if ctp_hpa < HIGH_CTP_HPA {
        0
    } else if ctp_hpa < LOW_CTP_HPA {
        1
    } else {
        2
    };
    let thick = if cot <= THIN_COT {
        0
    } else if cot <= THICK_COT {
        1
    } else {
        2
    };
    [
        [Cirrus, Cirrostratus, DeepConvection],
        [Altocumulus, Altostratus, Nimbostratus],
        [Cumulus, Stratocumulus, Stratus],
    ][level][thick]
}

pub fn is_deep_convective(ctp_hpa: f64, cot: f64) -> bool {
    classify_isccp(ctp_hpa, cot) == IsccpClass::DeepConvection
}

/// Variables of a diurnal curve.
pub const DIURNAL_VARIABLES: [&str; 4] = ["ccf", "cth", "cer", "cot"];

/// Pooled statistics of one local hour.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HourBin {
    pub hour: u32,
    /// Time steps falling in this hour.
    pub steps: u64,
    /// Region pixels with a valid phase.
    pub n_pixels: u64,
    /// Pixels counted as cloudy (deep convective when so restricted).
    pub n_cloudy: u64,
    pub ccf: Option<f64>,
    pub cth: Option<f64>,
    pub cer: Option<f64>,
    pub cot: Option<f64>,
}

impl HourBin {
    pub fn get(&self, variable: &str) -> Option<f64> {
        match variable {
            "ccf" => self.ccf,
            "cth" => self.cth,
            "cer" => self.cer,
            "cot" => self.cot,
            _ => None,
        }
    }

    fn n_for(&self, variable: &str) -> u64 {
        if variable == "ccf" {
            self.n_pixels
        } else if self.get(variable).is_some() {
            self.n_cloudy
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiurnalCurve {
    pub season: Season,
    pub deep_convective_only: bool,
    /// Exactly 24 bins, local hours 0 to 23.
    pub bins: Vec<HourBin>,
}

/// Local hour of a UTC timestamp at a fixed offset.
pub fn local_hour(ts: i64, tz_offset_h: i32) -> u32 {
    let utc = DateTime::from_timestamp(ts, 0).map(|d| d.hour() as i32).unwrap_or(0);
    (utc + tz_offset_h).rem_euclid(24) as u32
}

/// Curves per occupied season. Cloud cover is the cloudy share of the
/// region pixels with a valid phase, pooled over the steps of each hour;
/// properties are means over the cloudy pixels. With
/// `deep_convective_only` the cloudy set is restricted to deep convection.
pub fn diurnal_cycle(
    series: &TimeSeries,
    region: &Mask,
    tz_offset_h: i32,
    deep_convective_only: bool,
    method: CtpMethod,
) -> Result<Vec<DiurnalCurve>> {
    region.grid().check_same(series.grid(), "diurnal region")?;
    // [season][hour] = (steps, pixels, cloudy, sums and counts of 3 properties)
    type Acc = (u64, u64, u64, [f64; 3], [u64; 3]);
    let mut acc: [[Acc; 24]; 4] = [[(0, 0, 0, [0.0; 3], [0; 3]); 24]; 4];
    let mut seen = [false; 4];
    for (ts, l) in series.steps() {
        let s = Season::of_timestamp(*ts) as usize;
        let h = local_hour(*ts, tz_offset_h) as usize;
        seen[s] = true;
        let a = &mut acc[s][h];
        a.0 += 1;
        for k in 0..region.data().len() {
            if !region.data()[k] {
                continue;
            }
            let Some(c) = l.clp.at(k) else { continue };
            let c = c as u8;
            if c > ICE {
                continue;
            }
            a.1 += 1;
            if c == 0 {
                continue;
            }
            let props = [l.cth.at(k), l.cer.at(k), l.cot.at(k)];
            if deep_convective_only {
                let (Some(h), Some(t)) = (props[0], props[2]) else { continue };
                if !is_deep_convective(cth_to_ctp(h.clamp(0.0, 20.0), method)?, t) {
                    continue;
                }
            }
            a.2 += 1;
            for (v, p) in props.iter().enumerate() {
                if let Some(x) = p {
                    a.3[v] += x;
                    a.4[v] += 1;
                }
            }
        }
    }
    let seasons = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];
    Ok(seasons
        .iter()
        .filter(|s| seen[**s as usize])
        .map(|&season| DiurnalCurve {
            season,
            deep_convective_only,
            bins: (0..24)
                .map(|h| {
                    let a = &acc[season as usize][h];
                    let mean = |v: usize| (a.4[v] > 0).then(|| a.3[v] / a.4[v] as f64);
                    HourBin {
                        hour: h as u32,
                        steps: a.0,
                        n_pixels: a.1,
                        n_cloudy: a.2,
                        ccf: (a.1 > 0).then(|| 100.0 * a.2 as f64 / a.1 as f64),
                        cth: mean(0),
                        cer: mean(1),
                        cot: mean(2),
                    }
                })
                .collect(),
        })
        .collect())
}

/// `season,hour,variable,mean,n`, 24 rows per season and variable; empty
/// bins have an empty mean.
pub fn diurnal_csv(curves: &[DiurnalCurve]) -> String {
    let mut s = String::from("season,hour,variable,mean,n\n");
    for c in curves {
        for v in DIURNAL_VARIABLES {
            for b in &c.bins {
                let m = b.get(v).map(|x| format!("{x}")).unwrap_or_default();
                let _ = writeln!(s, "{},{},{v},{m},{}", c.season.name(), b.hour, b.n_for(v));
            }
        }
    }
    s
}

/// Linear scaling of a quicklook image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuicklookScale {
    pub min: f64,
    pub max: f64,
    /// How pixel values map to grey levels.
    pub mapping: String,
}

/// 8-bit binary PGM: invalid pixels are 0, valid values map linearly from
/// `[min, max]` onto 1 to 255.
pub fn encode_pgm(r: &Raster, min: f64, max: f64) -> Result<Vec<u8>> {
    ensure!(max > min, InvalidArgument, "quicklook range [{min}, {max}] is empty");
    let g = r.grid();
    let mut out = format!("P5\n{} {}\n255\n", g.ncols, g.nrows).into_bytes();
    for k in 0..g.len() {
        out.push(match r.at(k) {
            None => 0,
            Some(v) => (1.0 + 254.0 * ((v - min) / (max - min)).clamp(0.0, 1.0)).round() as u8,
        });
    }
    Ok(out)
}

/// Write `path` as PGM and a JSON sidecar beside it with the scaling.
/// Without an explicit range the valid data range is used.
pub fn write_quicklook(path: &Path, r: &Raster, range: Option<(f64, f64)>) -> Result<QuicklookScale> {
    let (min, max) = match range {
        Some(x) => x,
        None => {
            let vals: Vec<f64> = (0..r.values().len()).filter_map(|k| r.at(k)).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if vals.is_empty() {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo, lo + 1.0)
            }
        }
    };
    let bytes = encode_pgm(r, min, max)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let scale = QuicklookScale {
        min,
        max,
        mapping: "grey = round(1 + 254 * clamp((v - min) / (max - min), 0, 1)); 0 = no data".into(),
    };
    crate::scene::write_json(&path.with_extension("json"), &scale)?;
    Ok(scale)
}
