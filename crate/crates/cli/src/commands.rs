//! The five pipeline commands. Each reads and writes under one output
//! directory:
//!
//! ```text
//! scenes/index.json, scenes/dem.rgrd, scenes/{train,test}/<id>/
//! weights/{pretrain,finetune}/{clp,cth,cer,cot}.itlm, weights/rf.json
//! train/loss_<stage>_<task>.csv, train/rf_cv.json
//! pred/<product>/<id>/{clp,cth,cer,cot,coverage}.rgrd, pred/timing_<product>.json
//! reports/eval_<reference>.{json,csv}, reports/strata_track.csv
//! climo/*.rgrd, climo/*.pgm, climo/*.json, climo/diurnal_*.csv
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use itlm_core::climo::{self, PhaseSelect, TimeSeries};
use itlm_core::eval::{self, EvalReport, JointHistogram, LabelEval, ScoreReport, StratumRow};
use itlm_core::forest::{self, RfModel, RfSuite};
use itlm_core::geo::{bbox_mask, region_altitude_mask, rgrd};
use itlm_core::nn::{load_weights, save_weights, ResUnetParams, Task};
use itlm_core::scene::{
    gen_dataset, gen_dem, read_json, read_labels, read_scene, scene_timestamps, write_json, write_labels,
    write_scene, LabelSet, Property, Scene,
};
use itlm_core::train::{self, LabelSource, LossCurve, ModelSuite};
use itlm_core::{Error, Mask};
use serde::{Deserialize, Serialize};

use crate::config::{GridConfig, RunConfig, ScenegenConfig, TEST_SEED_OFFSET};
use crate::error::{CliError, CliResult};

/// Configuration plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
    Suite,
    Rf,
}

impl Stage {
    pub fn parse(s: &str) -> CliResult<Stage> {
        Ok(match s {
            "pretrain" => Stage::Pretrain,
            "finetune" => Stage::Finetune,
            "suite" => Stage::Suite,
            "rf" => Stage::Rf,
            _ => return Err(CliError::Config(format!("--stage: unknown stage {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    Truth,
    Source,
    Target,
    Track,
}

impl Reference {
    pub fn parse(s: &str) -> CliResult<Reference> {
        Ok(match s {
            "truth" => Reference::Truth,
            "source" => Reference::Source,
            "target" => Reference::Target,
            "track" => Reference::Track,
            _ => return Err(CliError::Config(format!("--reference: unknown reference {s:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Reference::Truth => "truth",
            Reference::Source => "source",
            Reference::Target => "target",
            Reference::Track => "track",
        }
    }
}

/// Product name of the neural suite trained up to `stage`.
pub fn itlm_product(stage: Stage) -> &'static str {
    match stage {
        Stage::Pretrain => "itlm_pretrain",
        _ => "itlm",
    }
}

pub const RF_PRODUCT: &str = "rf";

fn mkdir(p: &Path) -> CliResult<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Core(Error::io(p, e)))
}

fn write_text(p: &Path, s: &str) -> CliResult<()> {
    std::fs::write(p, s).map_err(|e| CliError::Core(Error::io(p, e)))
}

/// What `synth` produced; a differing index blocks regeneration without
/// `--force`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub grid: GridConfig,
    pub scenegen: ScenegenConfig,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Self {
        let out = cfg.io.out_dir.clone();
        Self { cfg, out, force: false }
    }

    fn scenes_dir(&self) -> PathBuf {
        self.out.join("scenes")
    }

    fn weights_dir(&self, stage: Stage) -> PathBuf {
        let sub = match stage {
            Stage::Pretrain => "pretrain",
            _ => "finetune",
        };
        self.out.join("weights").join(sub)
    }

    fn rf_path(&self) -> PathBuf {
        self.out.join("weights").join("rf.json")
    }

    fn pred_dir(&self) -> PathBuf {
        self.out.join("pred")
    }

    fn index(&self) -> CliResult<DatasetIndex> {
        let ids = |seed: u64, n: usize| (0..n as u64).map(|i| format!("scene_{:06}", seed + i)).collect();
        let sg = &self.cfg.scenegen;
        Ok(DatasetIndex {
            grid: self.cfg.grid.clone(),
            scenegen: sg.clone(),
            train: ids(sg.seed, sg.n_train),
            test: ids(sg.seed + TEST_SEED_OFFSET, sg.n_test),
        })
    }

    /// The on-disk index, which must match the configuration.
    fn dataset(&self) -> CliResult<DatasetIndex> {
        let path = self.scenes_dir().join("index.json");
        let on_disk: DatasetIndex = read_json(&path)?;
        if on_disk != self.index()? {
            return Err(CliError::Conflict(format!(
                "{} was generated with a different grid or scenegen section; rerun synth",
                path.display()
            )));
        }
        Ok(on_disk)
    }

    fn load_scenes(&self, split: &str, ids: &[String]) -> CliResult<Vec<Scene>> {
        ids.iter()
            .map(|id| Ok(read_scene(&self.scenes_dir().join(split).join(id))?))
            .collect()
    }
}

/// Generate the train and test scenes and the terrain model.
pub fn cmd_synth(ctx: &Ctx) -> CliResult<DatasetIndex> {
    let dir = ctx.scenes_dir();
    let index = ctx.index()?;
    let index_path = dir.join("index.json");
    if index_path.exists() {
        let old: Result<DatasetIndex, _> = read_json(&index_path);
        if old.as_ref().ok() != Some(&index) {
            if !ctx.force {
                return Err(CliError::Conflict(format!(
                    "{} holds a different dataset; pass --force to replace it",
                    index_path.display()
                )));
            }
            std::fs::remove_dir_all(&dir).map_err(|e| CliError::Core(Error::io(&dir, e)))?;
        }
    }
    mkdir(&dir)?;
    let grid = ctx.cfg.grid.grid()?;
    let sg = &ctx.cfg.scenegen;
    const CHUNK: usize = 4;
    for (split, seed, n, year) in [
        ("train", sg.seed, sg.n_train, sg.train_year),
        ("test", sg.seed + TEST_SEED_OFFSET, sg.n_test, sg.test_year),
    ] {
        let ts = scene_timestamps(year, &sg.months, &sg.hours_utc, n)?;
        for start in (0..n).step_by(CHUNK) {
            let len = CHUNK.min(n - start);
            let scenes = gen_dataset(seed + start as u64, len, &grid, &ts[start..start + len], &sg.dataset)?;
            for s in &scenes {
                write_scene(&dir.join(split).join(&s.id), s, &sg.dataset.coeffs)?;
            }
            log::info!("{split}: {} of {n} scenes written", start + len);
        }
    }
    rgrd::write(&dir.join("dem.rgrd"), &gen_dem(sg.seed, &grid)?)?;
    write_json(&index_path, &index)?;
    Ok(index)
}

fn save_suite(dir: &Path, suite: &ModelSuite) -> CliResult<()> {
    mkdir(dir)?;
    for t in Task::ALL {
        save_weights(suite.get(t), &dir.join(format!("{t}.itlm")))?;
    }
    Ok(())
}

/// The four weight files of a stage; the first missing one is named.
pub fn load_suite(dir: &Path) -> CliResult<ModelSuite> {
    let load = |t: Task| load_weights(&dir.join(format!("{t}.itlm")));
    let suite = ModelSuite {
        clp: load(Task::Clp)?,
        cth: load(Task::Cth)?,
        cer: load(Task::Cer)?,
        cot: load(Task::Cot)?,
    };
    suite.validate()?;
    Ok(suite)
}

/// Writes `<dir>/<task>_epNNN.itlm`.
fn checkpoint_writer(dir: &Path) -> impl FnMut(Task, usize, &ResUnetParams<f32>) -> itlm_core::Result<()> + '_ {
    move |task, epoch, p| {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_weights(p, &dir.join(format!("{task}_ep{epoch:03}.itlm")))
    }
}

fn write_curves(dir: &Path, stage: &str, curves: &[(Task, LabelSource, LossCurve)]) -> CliResult<()> {
    mkdir(dir)?;
    for (task, _, curve) in curves {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in curve.iter().enumerate() {
            let _ = writeln!(s, "{},{l}", e + 1);
        }
        write_text(&dir.join(format!("loss_{stage}_{task}.csv")), &s)?;
    }
    Ok(())
}

/// Train the neural suite stage by stage, or the forest baseline.
pub fn cmd_train(ctx: &Ctx, stage: Stage) -> CliResult<()> {
    let index = ctx.dataset()?;
    let train_dir = ctx.out.join("train");
    if stage == Stage::Finetune {
        // Fail on absent pre-trained weights before loading any scene.
        load_suite(&ctx.weights_dir(Stage::Pretrain))?;
    }
    let scenes = ctx.load_scenes("train", &index.train)?;
    let cfg = &ctx.cfg.train;
    if matches!(stage, Stage::Pretrain | Stage::Suite) {
        let mut curves = Vec::new();
        let ckpt = ctx.weights_dir(Stage::Pretrain).join("checkpoints");
        let pre = train::train_stage_with(
            &scenes,
            cfg,
            LabelSource::Source,
            None,
            &mut curves,
            Some(&mut checkpoint_writer(&ckpt)),
        )?;
        save_suite(&ctx.weights_dir(Stage::Pretrain), &pre)?;
        write_curves(&train_dir, "pretrain", &curves)?;
    }
    if matches!(stage, Stage::Finetune | Stage::Suite) {
        let base = load_suite(&ctx.weights_dir(Stage::Pretrain))?;
        let mut curves = Vec::new();
        let ckpt = ctx.weights_dir(Stage::Finetune).join("checkpoints");
        let fine = train::train_stage_with(
            &scenes,
            cfg,
            LabelSource::Target,
            Some(&base),
            &mut curves,
            Some(&mut checkpoint_writer(&ckpt)),
        )?;
        save_suite(&ctx.weights_dir(Stage::Finetune), &fine)?;
        write_curves(&train_dir, "finetune", &curves)?;
    }
    if stage == Stage::Rf {
        let suite = train_rf(ctx, &scenes, &train_dir)?;
        mkdir(&ctx.out.join("weights"))?;
        suite.save(&ctx.rf_path())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CvReport {
    task: Task,
    best: forest::ForestHyper,
    table: Vec<forest::CvRow>,
}

/// Forests on the target labels, the set the neural suite is fine-tuned on.
fn train_rf(ctx: &Ctx, scenes: &[Scene], train_dir: &Path) -> CliResult<RfSuite> {
    let stacks: Vec<_> = scenes.iter().map(|s| s.stack.clone()).collect();
    let labels: Vec<&LabelSet> = scenes.iter().map(|s| &s.target).collect();
    let rf = &ctx.cfg.rf;
    let fit = rf.fit();
    let mut cv = Vec::new();
    let mut models = Vec::new();
    for (k, task) in Task::ALL.into_iter().enumerate() {
        let mut hyper = rf.hyper.clone();
        hyper.seed = hyper.seed.wrapping_add(1000 * k as u64);
        if rf.grid_search.enabled {
            let gs = &rf.grid_search;
            let data = forest::sample_scene_pixels(&stacks, &labels, task, gs.sample_n, fit.seed.wrapping_add(k as u64))?;
            let grid: Vec<_> = rf
                .grid()
                .into_iter()
                .map(|h| forest::ForestHyper { seed: hyper.seed, ..h })
                .collect();
            let (best, table) = forest::grid_search_cv(&data, &grid, gs.k_folds, fit.seed)?;
            cv.push(CvReport {
                task,
                best: best.clone(),
                table,
            });
            hyper = best;
        }
        models.push(forest::train_rf_model(task, &stacks, &labels, &fit, &hyper)?);
    }
    if !cv.is_empty() {
        mkdir(train_dir)?;
        write_json(&train_dir.join("rf_cv.json"), &cv)?;
    }
    let mut it = models.into_iter();
    let mut next = || -> RfModel { it.next().expect("four models") };
    Ok(RfSuite {
        clp: next(),
        cth: next(),
        cer: next(),
        cot: next(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTiming {
    pub id: String,
    pub pixels: usize,
    pub itlm_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf_s: Option<f64>,
}

/// Compute time of the retrievals, I/O excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub product: String,
    pub scenes: Vec<SceneTiming>,
    pub itlm_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf_s: Option<f64>,
    /// `rf_s / itlm_s`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf_over_itlm: Option<f64>,
}

/// Retrieve every test scene with the neural suite of `stage`, and with
/// the forests when `with_rf`.
pub fn cmd_infer(ctx: &Ctx, stage: Stage, with_rf: bool) -> CliResult<TimingReport> {
    if stage == Stage::Rf {
        return Err(CliError::Config("--stage: infer takes pretrain or finetune; use --with-rf for forests".into()));
    }
    let index = ctx.dataset()?;
    let suite = load_suite(&ctx.weights_dir(stage))?;
    let rf = if with_rf { Some(RfSuite::load(&ctx.rf_path())?) } else { None };
    let product = itlm_product(stage);
    let t = &ctx.cfg.tiles;
    let mut timings = Vec::new();
    for id in &index.test {
        let scene = read_scene(&ctx.scenes_dir().join("test").join(id))?;
        let plan = train::scene_plan(&scene.stack, t.size, t.stride, t.blend)?;
        let r = train::predict_scene(&suite, &scene.stack, &plan)?;
        write_labels(&ctx.pred_dir().join(product).join(id), &r.labels)?;
        let rf_s = match &rf {
            Some(f) => {
                let p = forest::predict_scene_rf(f, &scene.stack)?;
                write_labels(&ctx.pred_dir().join(RF_PRODUCT).join(id), &p.labels)?;
                Some(p.seconds)
            }
            None => None,
        };
        log::info!("{id}: itlm {:.2} s{}", r.seconds, rf_s.map(|s| format!(", rf {s:.2} s")).unwrap_or_default());
        timings.push(SceneTiming {
            id: id.clone(),
            pixels: scene.grid().len(),
            itlm_s: r.seconds,
            rf_s,
        });
    }
    let itlm_s: f64 = timings.iter().map(|t| t.itlm_s).sum();
    let rf_s = with_rf.then(|| timings.iter().filter_map(|t| t.rf_s).sum::<f64>());
    let report = TimingReport {
        product: product.into(),
        scenes: timings,
        itlm_s,
        rf_s,
        rf_over_itlm: rf_s.map(|r| r / itlm_s),
    };
    write_json(&ctx.pred_dir().join(format!("timing_{product}.json")), &report)?;
    Ok(report)
}

/// Products with a prediction directory, sorted.
fn products(ctx: &Ctx) -> CliResult<Vec<String>> {
    let dir = ctx.pred_dir();
    let rd = std::fs::read_dir(&dir).map_err(|_| Error::Missing(format!("prediction directory {}", dir.display())))?;
    let mut out: Vec<String> = rd
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(String::from))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Missing(format!("predictions under {}", dir.display())).into());
    }
    Ok(out)
}

/// Scores of one product against one reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductReport {
    #[serde(flatten)]
    pub report: EvalReport,
    pub histograms: std::collections::BTreeMap<String, JointHistogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub reference: String,
    pub products: Vec<ProductReport>,
}

fn hist_range(p: Property) -> (f64, f64) {
    match p {
        Property::Cth => (0.0, 18.0),
        Property::Cer => (0.0, 60.0),
        Property::Cot => (0.0, 150.0),
    }
}

/// Score every predicted product on the test scenes against `reference`.
pub fn cmd_eval(ctx: &Ctx, reference: Reference) -> CliResult<EvalOutput> {
    let index = ctx.dataset()?;
    let names = products(ctx)?;
    let ec = &ctx.cfg.eval;
    let mut preds: Vec<Vec<LabelSet>> = Vec::new();
    for name in &names {
        let dir = ctx.pred_dir().join(name);
        preds.push(index.test.iter().map(|id| read_labels(&dir.join(id))).collect::<Result<_, _>>()?);
    }
    let mut evals: Vec<LabelEval> = names.iter().map(|_| LabelEval::new()).collect();
    let mut thick: Vec<(Vec<f64>, Vec<f64>)> = names.iter().map(|_| (vec![], vec![])).collect();
    let mut strata: Vec<Vec<eval::TrackPair>> = names.iter().map(|_| vec![]).collect();
    for (s, id) in index.test.iter().enumerate() {
        let scene = read_scene(&ctx.scenes_dir().join("test").join(id))?;
        let refset = match reference {
            Reference::Truth | Reference::Track => scene.truth.labels(),
            Reference::Source => scene.source.clone(),
            Reference::Target => scene.target.clone(),
        };
        for (k, p) in preds.iter().enumerate() {
            let pred = &p[s];
            if reference == Reference::Track {
                strata[k].extend(eval::collocate_track(
                    &scene.track,
                    pred,
                    scene.timestamp,
                    &scene.angles.solar_zenith,
                    ec.max_dt_s,
                )?);
                continue;
            }
            evals[k].add(pred, &refset, None)?;
            let dense = Mask::new(*refset.grid(), refset.cot.values().iter().map(|&v| v > ec.thick_cot).collect())?;
            let (a, b) = eval::paired_values(&pred.cot, &refset.cot, Some(&refset.coverage.and(&dense)?))?;
            thick[k].0.extend(a);
            thick[k].1.extend(b);
        }
    }
    let mut products_out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let (variables, confusion, rows, histograms) = if reference == Reference::Track {
            let rows = eval::stratified_report(&strata[k], name, ec.day_threshold_deg)?;
            let mut cm = eval::ConfusionMatrix::new();
            let (mut hp, mut hr) = (vec![], vec![]);
            for p in &strata[k] {
                cm.add(p.ref_clp, p.pred_clp);
                if let (Some(a), Some(b)) = (p.pred_cth, p.ref_cth) {
                    hp.push(a);
                    hr.push(b);
                }
            }
            let mut v = std::collections::BTreeMap::new();
            if cm.total() > 0 {
                v.insert("clp".into(), ScoreReport::accuracy(&cm));
                v.insert("cld".into(), ScoreReport::detection(&cm));
            }
            if !hp.is_empty() {
                v.insert("cth".into(), eval::scores(&hp, &hr)?);
            }
            (v, cm, rows, Default::default())
        } else {
            let mut v = evals[k].reports()?;
            if !thick[k].0.is_empty() {
                v.insert("cot_thick".into(), eval::scores(&thick[k].0, &thick[k].1)?);
            }
            let mut h = std::collections::BTreeMap::new();
            for p in Property::ALL {
                let (a, b) = &evals[k].pairs[&p];
                if !a.is_empty() {
                    let (lo, hi) = hist_range(p);
                    let e = eval::linear_edges(lo, hi, ec.hist_bins);
                    if let Ok(j) = eval::joint_hist(a, b, &e, &e) {
                        h.insert(p.name().to_string(), j);
                    }
                }
            }
            (v, evals[k].confusion.clone(), Vec::<StratumRow>::new(), h)
        };
        products_out.push(ProductReport {
            report: EvalReport {
                product: name.clone(),
                reference: reference.name().into(),
                variables,
                confusion,
                strata: rows,
            },
            histograms,
        });
    }
    let out = EvalOutput {
        reference: reference.name().into(),
        products: products_out,
    };
    let dir = ctx.out.join("reports");
    mkdir(&dir)?;
    write_json(&dir.join(format!("eval_{}.json", reference.name())), &out)?;
    let mut csv = String::new();
    for (k, p) in out.products.iter().enumerate() {
        let body = eval::variables_csv(&p.report);
        csv.push_str(if k == 0 { &body } else { body.split_once('\n').map(|x| x.1).unwrap_or("") });
    }
    write_text(&dir.join(format!("eval_{}.csv", reference.name())), &csv)?;
    if reference == Reference::Track {
        let rows: Vec<StratumRow> = out.products.iter().flat_map(|p| p.report.strata.clone()).collect();
        write_text(&dir.join("strata_track.csv"), &eval::strata_csv(&rows))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimoSummary {
    pub product: String,
    pub steps: usize,
    pub region_pixels: usize,
    /// Regional means of the fraction maps (%) and property maps.
    pub regional_mean: std::collections::BTreeMap<String, Option<f64>>,
    /// Cloudy region pixels per ISCCP type, over all steps.
    pub isccp_counts: std::collections::BTreeMap<String, u64>,
}

/// Fraction and mean maps, ISCCP counts and diurnal curves over the
/// high-terrain region, from the test-scene retrievals of `product`.
pub fn cmd_climo(ctx: &Ctx, product: &str) -> CliResult<ClimoSummary> {
    let index = ctx.dataset()?;
    let cc = &ctx.cfg.climo;
    let grid = ctx.cfg.grid.grid()?;
    let dem = rgrd::read(&ctx.scenes_dir().join("dem.rgrd"))?;
    let region = bbox_mask(&grid, &cc.bbox).and(&region_altitude_mask(&grid, &dem, cc.min_alt_m)?)?;
    let mut steps = Vec::new();
    for id in &index.test {
        let manifest: itlm_core::scene::SceneManifest =
            read_json(&ctx.scenes_dir().join("test").join(id).join("manifest.json"))?;
        steps.push((manifest.timestamp, read_labels(&ctx.pred_dir().join(product).join(id))?));
    }
    steps.sort_by_key(|s| s.0);
    let series = TimeSeries::new(steps)?;
    let dir = ctx.out.join("climo");
    mkdir(&dir)?;
    let mut means = std::collections::BTreeMap::new();
    for (name, which) in [("tcf", PhaseSelect::Total), ("wcf", PhaseSelect::Water), ("icf", PhaseSelect::Ice)] {
        let r = climo::cloud_fraction(&series, which, Some(&region))?;
        rgrd::write(&dir.join(format!("{name}.rgrd")), &r)?;
        climo::write_quicklook(&dir.join(format!("{name}.pgm")), &r, Some((0.0, 100.0)))?;
        means.insert(name.to_string(), climo::regional_mean(&r, None));
    }
    for p in Property::ALL {
        let r = climo::mean_property_map(&series, p, Some(&region))?;
        let name = format!("mean_{p}");
        rgrd::write(&dir.join(format!("{name}.rgrd")), &r)?;
        climo::write_quicklook(&dir.join(format!("{name}.pgm")), &r, Some(hist_range(p)))?;
        means.insert(name, climo::regional_mean(&r, None));
    }
    let mut counts = std::collections::BTreeMap::new();
    for (_, l) in series.steps() {
        for k in 0..grid.len() {
            if !region.data()[k] {
                continue;
            }
            if let (Some(h), Some(t)) = (l.cth.at(k), l.cot.at(k)) {
                let class = climo::classify_isccp(climo::cth_to_ctp(h.clamp(0.0, 20.0), cc.ctp_method)?, t);
                let key = serde_json::to_value(class).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                *counts.entry(key).or_insert(0u64) += 1;
            }
        }
    }
    for (file, dc) in [("diurnal_total.csv", false), ("diurnal_deep_convective.csv", true)] {
        let curves = climo::diurnal_cycle(&series, &region, cc.tz_offset_h, dc, cc.ctp_method)?;
        write_text(&dir.join(file), &climo::diurnal_csv(&curves))?;
    }
    let summary = ClimoSummary {
        product: product.into(),
        steps: series.steps().len(),
        region_pixels: region.count(),
        regional_mean: means,
        isccp_counts: counts,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}
