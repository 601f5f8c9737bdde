//! Evaluation statistics: confusion matrices, error scores, joint
//! histograms, lidar-track collocation and day/night by season strata.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geo::{Mask, Raster};
use crate::scene::{LabelSet, Property, TrackSample, CLEAR, ICE, MIXED};

pub const CLASS_NAMES: [&str; 3] = ["clear", "water", "ice"];

/// Rows are the reference class, columns the prediction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self {
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            counts: [[0; 3]; 3],
        }
    }

    /// Count one pair; codes outside clear/water/ice are skipped.
    pub fn add(&mut self, reference: u8, pred: u8) -> bool {
        if reference >= MIXED || pred >= MIXED {
            return false;
        }
        self.counts[reference as usize][pred as usize] += 1;
        true
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for r in 0..3 {
            for c in 0..3 {
                self.counts[r][c] += other.counts[r][c];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Overall accuracy in percent; `None` when empty.
    pub fn oa_pct(&self) -> Option<f64> {
        let t = self.total();
        (t > 0).then(|| 100.0 * (0..3).map(|k| self.counts[k][k]).sum::<u64>() as f64 / t as f64)
    }

    /// Accuracy of clear versus cloudy after merging water and ice.
    pub fn detection_oa_pct(&self) -> Option<f64> {
        let t = self.total();
        let cloudy_hit: u64 = (1..3).flat_map(|r| (1..3).map(move |c| (r, c))).map(|(r, c)| self.counts[r][c]).sum();
        (t > 0).then(|| 100.0 * (self.counts[0][0] + cloudy_hit) as f64 / t as f64)
    }
}

fn phase_code(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Confusion over pixels valid in both rasters and inside `mask`.
pub fn confusion(pred: &Raster, reference: &Raster, mask: Option<&Mask>) -> Result<ConfusionMatrix> {
    pred.grid().check_same(reference.grid(), "confusion")?;
    if let Some(m) = mask {
        m.grid().check_same(pred.grid(), "confusion mask")?;
    }
    let mut cm = ConfusionMatrix::new();
    for k in 0..pred.values().len() {
        if mask.is_some_and(|m| !m.data()[k]) {
            continue;
        }
        if let (Some(p), Some(r)) = (pred.at(k), reference.at(k)) {
            cm.add(phase_code(r), phase_code(p));
        }
    }
    Ok(cm)
}

/// Clear-versus-cloudy accuracy in percent.
pub fn cloud_detection_oa(pred: &Raster, reference: &Raster, mask: Option<&Mask>) -> Result<f64> {
    let cm = confusion(pred, reference, mask)?;
    cm.detection_oa_pct()
        .ok_or_else(|| crate::error::Error::Empty("no pixels to score cloud detection".into()))
}

/// Sample count with either an accuracy or regression statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n: u64,
    pub oa_pct: Option<f64>,
    pub r: Option<f64>,
    pub mae: Option<f64>,
    pub mbe: Option<f64>,
    pub rmse: Option<f64>,
}

impl ScoreReport {
    pub fn accuracy(cm: &ConfusionMatrix) -> Self {
        Self {
            n: cm.total(),
            oa_pct: cm.oa_pct(),
            r: None,
            mae: None,
            mbe: None,
            rmse: None,
        }
    }

    pub fn detection(cm: &ConfusionMatrix) -> Self {
        Self {
            oa_pct: cm.detection_oa_pct(),
            ..Self::accuracy(cm)
        }
    }
}

/// Pearson R, MAE, MBE (mean of pred − ref) and RMSE. R is missing when
/// either side has zero variance or fewer than two samples exist.
pub fn scores(pred: &[f64], reference: &[f64]) -> Result<ScoreReport> {
    ensure!(pred.len() == reference.len(), Shape, "{} predictions for {} references", pred.len(), reference.len());
    ensure!(!pred.is_empty(), Empty, "no samples to score");
    let n = pred.len() as f64;
    let (mut se, mut ae, mut be) = (0.0, 0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        let d = p - r;
        be += d;
        ae += d.abs();
        se += d * d;
    }
    let mp = pred.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        sxy += (p - mp) * (r - mr);
        sxx += (p - mp) * (p - mp);
        syy += (r - mr) * (r - mr);
    }
    let r = (pred.len() >= 2 && sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    Ok(ScoreReport {
        n: pred.len() as u64,
        oa_pct: None,
        r,
        mae: Some(ae / n),
        mbe: Some(be / n),
        rmse: Some((se / n).sqrt()),
    })
}

/// Values of both rasters where both are valid and `mask` holds.
pub fn paired_values(pred: &Raster, reference: &Raster, mask: Option<&Mask>) -> Result<(Vec<f64>, Vec<f64>)> {
    pred.grid().check_same(reference.grid(), "score")?;
    let (mut p, mut r) = (Vec::new(), Vec::new());
    for k in 0..pred.values().len() {
        if mask.is_some_and(|m| !m.data()[k]) {
            continue;
        }
        if let (Some(a), Some(b)) = (pred.at(k), reference.at(k)) {
            p.push(a);
            r.push(b);
        }
    }
    Ok((p, r))
}

/// [`scores`] over the jointly valid pixels of two rasters.
pub fn raster_scores(pred: &Raster, reference: &Raster, mask: Option<&Mask>) -> Result<ScoreReport> {
    let (p, r) = paired_values(pred, reference, mask)?;
    scores(&p, &r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `counts[ix][iy]`, x = reference, y = prediction.
    pub counts: Vec<Vec<u64>>,
    /// Counts divided by total count and bin area.
    pub density: Vec<Vec<f64>>,
    pub total: u64,
    /// Pairs outside the edges.
    pub dropped: u64,
    /// Share of pairs whose two values fall in the same bin index.
    pub diagonal_fraction: f64,
}

fn bin_of(edges: &[f64], v: f64) -> Option<usize> {
    let last = *edges.last()?;
    if !(v >= edges[0] && v <= last) {
        return None;
    }
    if v == last {
        return Some(edges.len() - 2);
    }
    Some(edges.partition_point(|&e| e <= v) - 1)
}

/// Binned joint distribution of (reference, prediction) pairs.
pub fn joint_hist(pred: &[f64], reference: &[f64], x_edges: &[f64], y_edges: &[f64]) -> Result<JointHistogram> {
    ensure!(pred.len() == reference.len(), Shape, "{} predictions for {} references", pred.len(), reference.len());
    ensure!(!pred.is_empty(), Empty, "joint histogram of no samples");
    for e in [x_edges, y_edges] {
        ensure!(e.len() >= 2, InvalidArgument, "histograms need at least two edges");
        ensure!(e.windows(2).all(|w| w[1] > w[0]), InvalidArgument, "histogram edges must increase strictly");
    }
    let (nx, ny) = (x_edges.len() - 1, y_edges.len() - 1);
    let mut counts = vec![vec![0u64; ny]; nx];
    let (mut total, mut dropped, mut diag) = (0u64, 0u64, 0u64);
    for (&p, &r) in pred.iter().zip(reference) {
        match (bin_of(x_edges, r), bin_of(y_edges, p)) {
            (Some(i), Some(j)) => {
                counts[i][j] += 1;
                total += 1;
                diag += (i == j) as u64;
            }
            _ => dropped += 1,
        }
    }
    ensure!(total > 0, Empty, "every sample falls outside the histogram edges");
    let density = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &c)| {
                    let area = (x_edges[i + 1] - x_edges[i]) * (y_edges[j + 1] - y_edges[j]);
                    c as f64 / (total as f64 * area)
                })
                .collect()
        })
        .collect();
    Ok(JointHistogram {
        x_edges: x_edges.to_vec(),
        y_edges: y_edges.to_vec(),
        counts,
        density,
        total,
        dropped,
        diagonal_fraction: diag as f64 / total as f64,
    })
}

/// `n` equal bins over `[lo, hi]`.
pub fn linear_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

/// One lidar sample matched to a product pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPair {
    pub time: i64,
    pub row: usize,
    pub col: usize,
    pub solar_zenith: f64,
    pub ref_clp: u8,
    pub ref_cth: Option<f64>,
    pub pred_clp: u8,
    pub pred_cth: Option<f64>,
}

/// Nearest-pixel matches; samples outside the grid, on invalid product
/// pixels or more than `max_dt_s` from `product_time` are dropped.
pub fn collocate_track(
    track: &[TrackSample],
    product: &LabelSet,
    product_time: i64,
    solar_zenith: &Raster,
    max_dt_s: i64,
) -> Result<Vec<TrackPair>> {
    let g = product.grid();
    g.check_same(solar_zenith.grid(), "collocation angles")?;
    let mut out = Vec::new();
    for s in track {
        if (s.time - product_time).abs() > max_dt_s {
            continue;
        }
        let Some((i, j)) = g.locate(s.lat, s.lon) else {
            continue;
        };
        let Some(p) = product.clp.get(i, j) else {
            continue;
        };
        out.push(TrackPair {
            time: s.time,
            row: i,
            col: j,
            solar_zenith: solar_zenith.get(i, j).unwrap_or(f64::NAN),
            ref_clp: s.clp,
            ref_cth: s.cth,
            pred_clp: phase_code(p),
            pred_cth: product.cth.get(i, j),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayNight {
    Day,
    Night,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    /// Meteorological season of a calendar month (1 to 12).
    pub fn of_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub fn of_timestamp(ts: i64) -> Season {
        Season::of_month(DateTime::from_timestamp(ts, 0).map(|d| d.month()).unwrap_or(1))
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Autumn => "autumn",
        }
    }
}

impl DayNight {
    pub fn of_zenith(sza: f64, threshold_deg: f64) -> DayNight {
        if sza < threshold_deg {
            DayNight::Day
        } else {
            DayNight::Night
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DayNight::Day => "day",
            DayNight::Night => "night",
        }
    }
}

/// One row of the stratified table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub indicator: String,
    pub product: String,
    pub day_night: DayNight,
    pub season: Season,
    #[serde(flatten)]
    pub report: ScoreReport,
}

/// Phase accuracy, detection accuracy and cloud-top height scores per
/// occupied (day/night, season) stratum. Height uses pairs where both
/// sides are cloudy.
pub fn stratified_report(pairs: &[TrackPair], product: &str, day_threshold_deg: f64) -> Result<Vec<StratumRow>> {
    let mut groups: BTreeMap<(DayNight, Season), Vec<&TrackPair>> = BTreeMap::new();
    for p in pairs {
        let key = (DayNight::of_zenith(p.solar_zenith, day_threshold_deg), Season::of_timestamp(p.time));
        groups.entry(key).or_default().push(p);
    }
    let mut rows = Vec::new();
    for ((dn, season), ps) in groups {
        let mut cm = ConfusionMatrix::new();
        let (mut hp, mut hr) = (Vec::new(), Vec::new());
        for p in &ps {
            cm.add(p.ref_clp, p.pred_clp);
            if let (Some(a), Some(b)) = (p.pred_cth, p.ref_cth) {
                if p.pred_clp != CLEAR && p.ref_clp != CLEAR && p.ref_clp <= ICE {
                    hp.push(a);
                    hr.push(b);
                }
            }
        }
        let row = |indicator: &str, report: ScoreReport| StratumRow {
            indicator: indicator.into(),
            product: product.into(),
            day_night: dn,
            season,
            report,
        };
        if cm.total() > 0 {
            rows.push(row("clp", ScoreReport::accuracy(&cm)));
            rows.push(row("cld", ScoreReport::detection(&cm)));
        }
        if !hp.is_empty() {
            rows.push(row("cth", scores(&hp, &hr)?));
        }
    }
    Ok(rows)
}

/// Running comparison of retrievals with a reference label set.
#[derive(Debug, Clone, Default)]
pub struct LabelEval {
    pub confusion: ConfusionMatrix,
    pub pairs: BTreeMap<Property, (Vec<f64>, Vec<f64>)>,
}

impl LabelEval {
    pub fn new() -> Self {
        Self {
            confusion: ConfusionMatrix::new(),
            pairs: Property::ALL.iter().map(|&p| (p, (Vec::new(), Vec::new()))).collect(),
        }
    }

    /// Add one scene: phase where the reference has coverage, properties
    /// where both sides carry a value, all inside `mask`.
    pub fn add(&mut self, pred: &LabelSet, reference: &LabelSet, mask: Option<&Mask>) -> Result<()> {
        let region = match mask {
            Some(m) => reference.coverage.and(m)?,
            None => reference.coverage.clone(),
        };
        self.confusion.merge(&confusion(&pred.clp, &reference.clp, Some(&region))?);
        for p in Property::ALL {
            let (a, b) = paired_values(pred.property(p), reference.property(p), Some(&region))?;
            let e = self.pairs.get_mut(&p).expect("all properties present");
            e.0.extend(a);
            e.1.extend(b);
        }
        Ok(())
    }

    /// One report per variable; variables without samples are omitted.
    pub fn reports(&self) -> Result<BTreeMap<String, ScoreReport>> {
        let mut out = BTreeMap::new();
        if self.confusion.total() > 0 {
            out.insert("clp".to_string(), ScoreReport::accuracy(&self.confusion));
            out.insert("cld".to_string(), ScoreReport::detection(&self.confusion));
        }
        for (p, (a, b)) in &self.pairs {
            if !a.is_empty() {
                out.insert(p.name().to_string(), scores(a, b)?);
            }
        }
        Ok(out)
    }
}

/// A full evaluation: per-variable scores, the phase confusion matrix and
/// optional stratified track scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub product: String,
    pub reference: String,
    pub variables: BTreeMap<String, ScoreReport>,
    pub confusion: ConfusionMatrix,
    pub strata: Vec<StratumRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub const SCORE_FIELDS: &str = "n,oa_pct,r,mae,mbe,rmse";

fn score_cells(r: &ScoreReport) -> String {
    format!("{},{},{},{},{},{}", r.n, opt(r.oa_pct), opt(r.r), opt(r.mae), opt(r.mbe), opt(r.rmse))
}

/// Per-variable CSV: `variable,n,oa_pct,r,mae,mbe,rmse`.
pub fn variables_csv(report: &EvalReport) -> String {
    let mut s = format!("product,reference,variable,{SCORE_FIELDS}\n");
    for (v, r) in &report.variables {
        let _ = writeln!(s, "{},{},{v},{}", report.product, report.reference, score_cells(r));
    }
    s
}

/// One CSV row per stratum.
pub fn strata_csv(rows: &[StratumRow]) -> String {
    let mut s = format!("indicator,product,day_night,season,{SCORE_FIELDS}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.indicator,
            r.product,
            r.day_night.name(),
            r.season.name(),
            score_cells(&r.report)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoGrid;
    use crate::scene::UNCERTAIN;

    fn grid(n: usize) -> GeoGrid {
        GeoGrid::new(30.0, 90.0, 0.1, 0.1, 1, n).unwrap()
    }

    #[test]
    fn hand_counted_confusion() {
        let g = grid(5);
        let r = Raster::from_values(g, vec![0.0, 1.0, 2.0, 1.0, UNCERTAIN as f64]).unwrap();
        let p = Raster::from_values(g, vec![0.0, 2.0, 2.0, 1.0, 1.0]).unwrap();
        let cm = confusion(&p, &r, None).unwrap();
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.oa_pct(), Some(75.0));
        assert_eq!(cm.counts[1][2], 1);
        assert_eq!(cm.detection_oa_pct(), Some(100.0));
        let same = confusion(&r, &r, None).unwrap();
        assert_eq!(same.oa_pct(), Some(100.0));
    }

    #[test]
    fn detection_hand_case() {
        let g = grid(5);
        let r = Raster::from_values(g, vec![0.0, 0.0, 1.0, 2.0, 2.0]).unwrap();
        let p = Raster::from_values(g, vec![0.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(cloud_detection_oa(&p, &r, None).unwrap(), 80.0);
    }

    #[test]
    fn hand_scores() {
        let s = scores(&[2.0, 4.0], &[1.0, 2.0]).unwrap();
        assert_eq!(s.mbe, Some(1.5));
        assert_eq!(s.mae, Some(1.5));
        assert!((s.rmse.unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        let c = scores(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(c.r, None);
        let p = scores(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((p.rmse, p.r), (Some(0.0), Some(1.0)));
        assert!(scores(&[], &[]).is_err());
    }

    #[test]
    fn histogram_diagonal() {
        let e = linear_edges(0.0, 10.0, 5);
        let v: Vec<f64> = (0..100).map(|k| k as f64 / 10.0).collect();
        let h = joint_hist(&v, &v, &e, &e).unwrap();
        assert_eq!(h.diagonal_fraction, 1.0);
        let mass: f64 = h.density.iter().flatten().map(|d| d * 4.0).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(joint_hist(&[], &[], &e, &e).is_err());
    }

    #[test]
    fn seasons() {
        assert_eq!(Season::of_month(1), Season::Winter);
        assert_eq!(Season::of_month(4), Season::Spring);
        assert_eq!(Season::of_month(7), Season::Summer);
        assert_eq!(Season::of_month(10), Season::Autumn);
        assert_eq!(Season::of_month(12), Season::Winter);
    }

    #[test]
    fn strata_partition_pairs() {
        // 2019-07-15 04:00 UTC.
        let t = 1_563_163_200;
        let mk = |sza: f64, time: i64| TrackPair {
            time,
            row: 0,
            col: 0,
            solar_zenith: sza,
            ref_clp: 1,
            ref_cth: Some(3.0),
            pred_clp: 1,
            pred_cth: Some(4.0),
        };
        let pairs = vec![mk(30.0, t), mk(30.0, t), mk(120.0, t), mk(30.0, t - 90 * 86400)];
        let rows = stratified_report(&pairs, "itlm", 85.0).unwrap();
        let clp: Vec<&StratumRow> = rows.iter().filter(|r| r.indicator == "clp").collect();
        assert_eq!(clp.len(), 3);
        assert_eq!(clp.iter().map(|r| r.report.n).sum::<u64>(), 4);
        let only_day = stratified_report(&pairs[..2], "itlm", 85.0).unwrap();
        assert!(only_day.iter().all(|r| r.day_night == DayNight::Day && r.season == Season::Summer));
        let csv = strata_csv(&rows);
        assert!(csv.starts_with("indicator,product,day_night,season,n,oa_pct,r,mae,mbe,rmse\n"));
    }
}
