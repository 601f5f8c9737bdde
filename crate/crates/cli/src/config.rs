//! Run configuration: one JSON document covering every pipeline stage.
//! Every section is optional and falls back to the defaults below; unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use itlm_core::climo::CtpMethod;
use itlm_core::forest::{ForestHyper, RfConfig};
use itlm_core::scene::DatasetConfig;
use itlm_core::tiles::{Blend, DEFAULT_TILE};
use itlm_core::train::SuiteConfig;
use itlm_core::{BBox, GeoGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lat_north: f64,
    pub lon_west: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub nrows: usize,
    pub ncols: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lat_north: 40.0,
            lon_west: 85.0,
            dlat: 0.05,
            dlon: 0.05,
            nrows: 256,
            ncols: 256,
        }
    }
}

impl GridConfig {
    pub fn grid(&self) -> itlm_core::Result<GeoGrid> {
        GeoGrid::new(self.lat_north, self.lon_west, self.dlat, self.dlon, self.nrows, self.ncols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenegenConfig {
    /// Train scenes use seeds `seed..`, test scenes `seed + 100000..`.
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_year: i32,
    pub test_year: i32,
    pub months: Vec<u32>,
    pub hours_utc: Vec<u32>,
    pub dataset: DatasetConfig,
}

impl Default for ScenegenConfig {
    fn default() -> Self {
        Self {
            seed: 2019,
            n_train: 40,
            n_test: 10,
            train_year: 2019,
            test_year: 2020,
            months: vec![1, 4, 7, 10],
            hours_utc: vec![3, 18, 6, 0, 9, 15],
            dataset: DatasetConfig::default(),
        }
    }
}

pub const TEST_SEED_OFFSET: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilesConfig {
    pub size: usize,
    pub stride: usize,
    pub blend: Blend,
}

impl Default for TilesConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_TILE,
            stride: 48,
            blend: Blend::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSearchConfig {
    pub enabled: bool,
    pub max_depths: Vec<usize>,
    pub n_estimators: Vec<usize>,
    pub k_folds: usize,
    /// Pixels used for the search, per forest.
    pub sample_n: usize,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            max_depths: vec![10, 20, 40],
            n_estimators: vec![30, 90, 180],
            k_folds: 5,
            sample_n: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfSection {
    pub hyper: ForestHyper,
    /// Pixels sampled per forest.
    pub sample_n: usize,
    pub seed: u64,
    pub grid_search: GridSearchConfig,
}

impl Default for RfSection {
    fn default() -> Self {
        let fit = RfConfig::default();
        Self {
            hyper: fit.hyper,
            sample_n: fit.sample_n,
            seed: fit.seed,
            grid_search: GridSearchConfig::default(),
        }
    }
}

impl RfSection {
    pub fn fit(&self) -> RfConfig {
        RfConfig {
            hyper: self.hyper.clone(),
            sample_n: self.sample_n,
            seed: self.seed,
        }
    }

    /// The hyperparameter grid, varying depth and tree count around `fit.hyper`.
    pub fn grid(&self) -> Vec<ForestHyper> {
        let mut out = Vec::new();
        for &d in &self.grid_search.max_depths {
            for &n in &self.grid_search.n_estimators {
                out.push(ForestHyper {
                    max_depth: d,
                    n_estimators: n,
                    ..self.hyper.clone()
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub hist_bins: usize,
    pub max_dt_s: i64,
    pub day_threshold_deg: f64,
    /// Reference optical thickness above which clouds count as thick.
    pub thick_cot: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            hist_bins: 20,
            max_dt_s: 450,
            day_threshold_deg: 85.0,
            thick_cot: 23.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClimoConfig {
    pub bbox: BBox,
    pub min_alt_m: f64,
    pub tz_offset_h: i32,
    pub ctp_method: CtpMethod,
}

impl Default for ClimoConfig {
    fn default() -> Self {
        Self {
            bbox: BBox {
                lat_min: 26.0,
                lat_max: 40.0,
                lon_min: 73.0,
                lon_max: 105.0,
            },
            min_alt_m: 2500.0,
            tz_offset_h: 8,
            ctp_method: CtpMethod::Isa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { out_dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub scenegen: ScenegenConfig,
    pub tiles: TilesConfig,
    pub train: SuiteConfig,
    pub rf: RfSection,
    pub eval: EvalConfig,
    pub climo: ClimoConfig,
    pub io: IoConfig,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.grid.grid().map_err(|e| bad("grid", e))?;
        let sg = &self.scenegen;
        if sg.n_train == 0 {
            return Err(bad("scenegen.n_train", "must be at least 1"));
        }
        if sg.n_test == 0 {
            return Err(bad("scenegen.n_test", "must be at least 1"));
        }
        if sg.months.is_empty() || sg.months.iter().any(|m| !(1..=12).contains(m)) {
            return Err(bad("scenegen.months", "must list months 1 to 12"));
        }
        if sg.hours_utc.is_empty() || sg.hours_utc.iter().any(|h| *h > 23) {
            return Err(bad("scenegen.hours_utc", "must list hours 0 to 23"));
        }
        let slots = sg.months.len() * sg.hours_utc.len();
        let mut distinct = sg.months.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let mut hours = sg.hours_utc.clone();
        hours.sort_unstable();
        hours.dedup();
        if distinct.len() * hours.len() != slots {
            return Err(bad("scenegen", "months and hours_utc must not repeat"));
        }
        if sg.n_test > slots {
            return Err(bad(
                "scenegen.n_test",
                format!("{} test scenes need distinct times but only {slots} month/hour slots exist", sg.n_test),
            ));
        }
        if sg.dataset.swath_width_px == 0 || sg.dataset.swath_width_px > self.grid.ncols {
            return Err(bad("scenegen.dataset.swath_width_px", "must lie between 1 and the grid width"));
        }
        let t = &self.tiles;
        if t.size < 8 || t.size > self.grid.nrows.min(self.grid.ncols) {
            return Err(bad("tiles.size", "must be at least 8 and fit inside the grid"));
        }
        if t.stride == 0 || t.stride > t.size {
            return Err(bad("tiles.stride", "must lie between 1 and tiles.size"));
        }
        if let Blend::CenterCrop { margin } = t.blend {
            if 2 * margin >= t.size {
                return Err(bad("tiles.blend.margin", "must be less than half the tile size"));
            }
        }
        for task in itlm_core::nn::Task::ALL {
            let c = self.train.get(task);
            c.validate(task).map_err(|e| bad(&format!("train.{task}"), e))?;
            if c.tile_size != t.size {
                return Err(bad(&format!("train.{task}.tile_size"), "must equal tiles.size"));
            }
        }
        if self.train.inference_stride == 0 || self.train.inference_stride > t.size {
            return Err(bad("train.inference_stride", "must lie between 1 and tiles.size"));
        }
        self.rf.hyper.validate().map_err(|e| bad("rf.hyper", e))?;
        if self.rf.sample_n == 0 {
            return Err(bad("rf.sample_n", "must be positive"));
        }
        let gs = &self.rf.grid_search;
        if gs.enabled && (gs.max_depths.is_empty() || gs.n_estimators.is_empty() || gs.k_folds < 2) {
            return Err(bad("rf.grid_search", "needs depths, tree counts and at least 2 folds"));
        }
        if self.eval.hist_bins == 0 {
            return Err(bad("eval.hist_bins", "must be positive"));
        }
        if self.eval.max_dt_s < 0 {
            return Err(bad("eval.max_dt_s", "must be non-negative"));
        }
        if !(-12..=14).contains(&self.climo.tz_offset_h) {
            return Err(bad("climo.tz_offset_h", "must lie between -12 and 14"));
        }
        Ok(())
    }
}
