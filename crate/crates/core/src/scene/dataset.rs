//! Seeded scene collections and their on-disk layout.
//!
//! A scene directory holds a `manifest.json` plus RGRD rasters:
//!
//! ```text
//! manifest.json
//! stack/bt_<band>.rgrd             six brightness temperatures
//! angles/<angle>.rgrd              view/solar zenith and azimuth
//! truth/<field>.rgrd               truth fields (incl. auxiliary inputs)
//! source/{clp,cth,cer,cot,coverage}.rgrd
//! target/{clp,cth,cer,cot,coverage}.rgrd
//! track.json
//! ```
//!
//! The manifest lists the file backing every stack channel, in stack order,
//! so auxiliary channels are stored once under `truth/`.

use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{gaussian_values, mix_seed, rng};
use super::{
    build_stack, channel_names, forward_bt, gen_truth, simulate_source_labels,
    simulate_target_labels, simulate_track, track_path, ForwardCoeffs, LabelSet, SceneStack,
    SceneTruth, SourceBias, Swath, TargetNoise, TrackSample, TruthParams, BT_BANDS_UM,
    PROFILE_LEVELS_HPA, SE_BANDS_UM,
};
use crate::error::{ensure, Error, Result};
use crate::geo::{rgrd, GeoAngles, GeoGrid, Raster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Longitude of the geostationary sub-satellite point, degrees east.
    pub subsat_lon: f64,
    pub truth: TruthParams,
    /// Per-scene cloud fraction is drawn uniformly within ± this of
    /// `truth.cloud_fraction`.
    pub cloud_fraction_jitter: f64,
    pub coeffs: ForwardCoeffs,
    /// BT noise, K.
    pub noise_sigma: f64,
    pub bias: SourceBias,
    pub glint_cutoff_deg: f64,
    pub day_threshold_deg: f64,
    pub swath_width_px: usize,
    pub target_noise: TargetNoise,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            subsat_lon: 104.7,
            truth: TruthParams::default(),
            cloud_fraction_jitter: 0.1,
            coeffs: ForwardCoeffs::default(),
            noise_sigma: 0.2,
            bias: SourceBias::default(),
            glint_cutoff_deg: 30.0,
            day_threshold_deg: 85.0,
            swath_width_px: 64,
            target_noise: TargetNoise::default(),
        }
    }
}

/// Everything generated for one synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub seed: u64,
    /// UTC seconds.
    pub timestamp: i64,
    pub subsat_lon: f64,
    pub truth: SceneTruth,
    pub angles: GeoAngles,
    /// 23-channel model input.
    pub stack: SceneStack,
    pub source: LabelSet,
    pub target: LabelSet,
    pub swath: Swath,
    pub track: Vec<TrackSample>,
}

impl Scene {
    pub fn grid(&self) -> &GeoGrid {
        self.stack.grid()
    }

    pub fn generate(id: String, seed: u64, grid: &GeoGrid, timestamp: i64, cfg: &DatasetConfig) -> Result<Scene> {
        let mut r = rng(mix_seed(seed, 400));
        let mut params = cfg.truth.clone();
        if cfg.cloud_fraction_jitter > 0.0 {
            let j = cfg.cloud_fraction_jitter;
            params.cloud_fraction = (params.cloud_fraction + r.random_range(-j..j)).clamp(0.05, 0.95);
        }
        let truth = gen_truth(seed, grid, &params)?;
        let angles = GeoAngles::compute(grid, cfg.subsat_lon, timestamp)?;
        let bts = forward_bt(&truth, &angles.view_zenith, &cfg.coeffs, cfg.noise_sigma, seed)?;
        let stack = build_stack(&truth, &bts, &angles.view_zenith, None)?;
        let source = simulate_source_labels(&truth, &angles, &cfg.bias, cfg.glint_cutoff_deg, cfg.day_threshold_deg)?;
        let swath = Swath {
            center_col: r.random_range(0..grid.ncols),
            width_px: cfg.swath_width_px.max(1),
        };
        let target = simulate_target_labels(&truth, swath, &cfg.target_noise, seed)?;
        let track = simulate_track(&truth, &track_path(grid, seed), timestamp)?;
        Ok(Scene {
            id,
            seed,
            timestamp,
            subsat_lon: cfg.subsat_lon,
            truth,
            angles,
            stack,
            source,
            target,
            swath,
            track,
        })
    }
}

/// Generate `n_scenes` scenes with seeds `seed..seed + n_scenes`; scene `i`
/// takes `timestamps[i % timestamps.len()]`.
pub fn gen_dataset(
    seed: u64,
    n_scenes: usize,
    grid: &GeoGrid,
    timestamps: &[i64],
    cfg: &DatasetConfig,
) -> Result<Vec<Scene>> {
    ensure!(n_scenes >= 1, InvalidArgument, "dataset needs at least one scene");
    ensure!(!timestamps.is_empty(), InvalidArgument, "dataset needs at least one timestamp");
    (0..n_scenes)
        .into_par_iter()
        .map(|i| {
            let s = seed + i as u64;
            Scene::generate(format!("scene_{s:06}"), s, grid, timestamps[i % timestamps.len()], cfg)
        })
        .collect()
}

/// Timestamps cycling through `months` first, then `hours_utc`; each on the
/// 15th of the month.
pub fn scene_timestamps(year: i32, months: &[u32], hours_utc: &[u32], n: usize) -> Result<Vec<i64>> {
    ensure!(!months.is_empty() && !hours_utc.is_empty(), InvalidArgument, "months and hours must be non-empty");
    (0..n)
        .map(|i| {
            let month = months[i % months.len()];
            let hour = hours_utc[(i / months.len()) % hours_utc.len()];
            Utc.with_ymd_and_hms(year, month, 15, hour, 0, 0)
                .single()
                .map(|t| t.timestamp())
                .ok_or_else(|| Error::InvalidArgument(format!("invalid date {year}-{month}-15 {hour}:00")))
        })
        .collect()
}

/// Smooth synthetic terrain, metres, in [0, 5500].
pub fn gen_dem(seed: u64, grid: &GeoGrid) -> Result<Raster> {
    let f = gaussian_values(mix_seed(seed, 500), grid.nrows, grid.ncols, 4.0, 1.0);
    let v = f.iter().map(|z| (2600.0 + 1300.0 * z).clamp(0.0, 5500.0)).collect();
    Raster::from_values(*grid, v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub id: String,
    pub seed: u64,
    pub timestamp: i64,
    pub grid: GeoGrid,
    pub subsat_lon: f64,
    pub lapse_rate: f64,
    pub channel_order: Vec<String>,
    /// File backing each stack channel, relative to the scene directory.
    pub channel_files: Vec<String>,
    pub coeffs: ForwardCoeffs,
    pub swath: Swath,
}

fn truth_fields(t: &SceneTruth) -> Vec<(String, &Raster)> {
    let mut v: Vec<(String, &Raster)> = vec![
        ("clp".into(), &t.clp),
        ("cth".into(), &t.cth),
        ("cer".into(), &t.cer),
        ("cot".into(), &t.cot),
        ("skt".into(), &t.skt),
        ("tcwv".into(), &t.tcwv),
    ];
    for (l, p) in PROFILE_LEVELS_HPA.iter().enumerate() {
        v.push((format!("atp_{p}"), &t.atp[l]));
    }
    for (l, p) in PROFILE_LEVELS_HPA.iter().enumerate() {
        v.push((format!("rhp_{p}"), &t.rhp[l]));
    }
    for (b, name) in SE_BANDS_UM.iter().enumerate() {
        v.push((format!("se_{name}"), &t.se[b]));
    }
    v
}

fn channel_files() -> Vec<String> {
    let mut files: Vec<String> = BT_BANDS_UM.iter().map(|b| format!("stack/bt_{b}.rgrd")).collect();
    files.push("angles/view_zenith.rgrd".into());
    files.extend(channel_names(false)[7..].iter().map(|n| format!("truth/{n}.rgrd")));
    files
}

const ANGLE_FILES: [&str; 4] = ["view_zenith", "view_azimuth", "solar_zenith", "solar_azimuth"];

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn write_labels(dir: &Path, l: &LabelSet) -> Result<()> {
    mkdir(dir)?;
    rgrd::write(&dir.join("clp.rgrd"), &l.clp)?;
    rgrd::write(&dir.join("cth.rgrd"), &l.cth)?;
    rgrd::write(&dir.join("cer.rgrd"), &l.cer)?;
    rgrd::write(&dir.join("cot.rgrd"), &l.cot)?;
    rgrd::write_mask(&dir.join("coverage.rgrd"), &l.coverage)
}

pub fn read_labels(dir: &Path) -> Result<LabelSet> {
    Ok(LabelSet {
        clp: rgrd::read(&dir.join("clp.rgrd"))?,
        cth: rgrd::read(&dir.join("cth.rgrd"))?,
        cer: rgrd::read(&dir.join("cer.rgrd"))?,
        cot: rgrd::read(&dir.join("cot.rgrd"))?,
        coverage: rgrd::read_mask(&dir.join("coverage.rgrd"))?,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&s).map_err(|e| Error::format("JSON", path, e.to_string()))
}

pub fn write_scene(dir: &Path, scene: &Scene, coeffs: &ForwardCoeffs) -> Result<()> {
    for sub in ["stack", "angles", "truth"] {
        mkdir(&dir.join(sub))?;
    }
    for (b, name) in BT_BANDS_UM.iter().enumerate() {
        rgrd::write(&dir.join(format!("stack/bt_{name}.rgrd")), &scene.stack.channels()[b])?;
    }
    let a = &scene.angles;
    for (name, r) in ANGLE_FILES.iter().zip([&a.view_zenith, &a.view_azimuth, &a.solar_zenith, &a.solar_azimuth]) {
        rgrd::write(&dir.join(format!("angles/{name}.rgrd")), r)?;
    }
    for (name, r) in truth_fields(&scene.truth) {
        rgrd::write(&dir.join(format!("truth/{name}.rgrd")), r)?;
    }
    write_labels(&dir.join("source"), &scene.source)?;
    write_labels(&dir.join("target"), &scene.target)?;
    write_json(&dir.join("track.json"), &scene.track)?;
    write_json(
        &dir.join("manifest.json"),
        &SceneManifest {
            id: scene.id.clone(),
            seed: scene.seed,
            timestamp: scene.timestamp,
            grid: *scene.grid(),
            subsat_lon: scene.subsat_lon,
            lapse_rate: scene.truth.lapse_rate,
            channel_order: channel_names(false),
            channel_files: channel_files(),
            coeffs: coeffs.clone(),
            swath: scene.swath,
        },
    )
}

pub fn read_scene(dir: &Path) -> Result<Scene> {
    let manifest: SceneManifest = read_json(&dir.join("manifest.json"))?;
    let read = |rel: String| -> Result<Raster> {
        let p: PathBuf = dir.join(rel);
        if !p.exists() {
            return Err(Error::Missing(p.display().to_string()));
        }
        rgrd::read(&p)
    };
    let channels = manifest
        .channel_files
        .iter()
        .map(|f| read(f.clone()))
        .collect::<Result<Vec<_>>>()?;
    let stack = SceneStack::new(channels)?;
    stack.grid().check_same(&manifest.grid, "scene manifest")?;

    let t = |name: &str| read(format!("truth/{name}.rgrd"));
    let levels = |prefix: &str| -> Result<[Raster; 4]> {
        let v = PROFILE_LEVELS_HPA
            .iter()
            .map(|p| t(&format!("{prefix}_{p}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(v.try_into().expect("four levels"))
    };
    let se = SE_BANDS_UM
        .iter()
        .map(|b| t(&format!("se_{b}")))
        .collect::<Result<Vec<_>>>()?;
    let truth = SceneTruth {
        clp: t("clp")?,
        cth: t("cth")?,
        cer: t("cer")?,
        cot: t("cot")?,
        skt: t("skt")?,
        tcwv: t("tcwv")?,
        atp: levels("atp")?,
        rhp: levels("rhp")?,
        se: se.try_into().expect("six bands"),
        lapse_rate: manifest.lapse_rate,
    };
    let a = |name: &str| read(format!("angles/{name}.rgrd"));
    let angles = GeoAngles {
        view_zenith: a("view_zenith")?,
        view_azimuth: a("view_azimuth")?,
        solar_zenith: a("solar_zenith")?,
        solar_azimuth: a("solar_azimuth")?,
    };
    Ok(Scene {
        id: manifest.id,
        seed: manifest.seed,
        timestamp: manifest.timestamp,
        subsat_lon: manifest.subsat_lon,
        truth,
        angles,
        stack,
        source: read_labels(&dir.join("source"))?,
        target: read_labels(&dir.join("target"))?,
        swath: manifest.swath,
        track: read_json(&dir.join("track.json"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Datelike, DateTime};

    fn grid() -> GeoGrid {
        GeoGrid::new(40.0, 88.0, 0.05, 0.05, 32, 32).unwrap()
    }

    #[test]
    fn same_seed_same_dataset() {
        let ts = scene_timestamps(2019, &[1, 4], &[3], 2).unwrap();
        let a = gen_dataset(10, 2, &grid(), &ts, &DatasetConfig::default()).unwrap();
        let b = gen_dataset(10, 2, &grid(), &ts, &DatasetConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disjoint_seed_ranges_give_distinct_scenes() {
        let ts = scene_timestamps(2019, &[7], &[3], 3).unwrap();
        let train = gen_dataset(100, 3, &grid(), &ts, &DatasetConfig::default()).unwrap();
        let test = gen_dataset(200, 3, &grid(), &ts, &DatasetConfig::default()).unwrap();
        for a in &train {
            for b in &test {
                assert_ne!(a.truth, b.truth);
            }
        }
    }

    #[test]
    fn one_scene_per_month() {
        let months: Vec<u32> = (1..=12).collect();
        let ts = scene_timestamps(2020, &months, &[0, 6], 12).unwrap();
        let got: Vec<u32> = ts
            .iter()
            .map(|&t| DateTime::from_timestamp(t, 0).unwrap().month())
            .collect();
        assert_eq!(got, months);
    }

    #[test]
    fn scene_round_trips_through_disk() {
        let ts = scene_timestamps(2019, &[4], &[4], 1).unwrap();
        let cfg = DatasetConfig::default();
        let scenes = gen_dataset(3, 1, &grid(), &ts, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &scenes[0], &cfg.coeffs).unwrap();
        let back = read_scene(dir.path()).unwrap();
        assert_eq!(back, scenes[0]);
        std::fs::remove_file(dir.path().join("truth/skt.rgrd")).unwrap();
        assert!(matches!(read_scene(dir.path()), Err(Error::Missing(_))));
    }

    #[test]
    fn dem_range() {
        let d = gen_dem(1, &grid()).unwrap();
        assert!(d.values().iter().all(|v| (0.0..=5500.0).contains(v)));
    }
}
