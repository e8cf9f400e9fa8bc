//! Batch orchestration: configuration, stage execution and artifacts.
//!
//! Every stage reads the previous stage's artifacts from the output
//! directory, so each can be re-run on its own:
//!
//! | stage     | reads                               | writes                                   |
//! |-----------|-------------------------------------|------------------------------------------|
//! | fit-neb   | scans                               | `neb.json`, `diagnostics.csv`            |
//! | segment   | scans, `neb.json`                   | `regions.json`, `regions.csv`            |
//! | pick      | scans, spectra, `regions.json`      | `fits.json`, `peaks_unmerged.{json,csv}` |
//! | merge     | `peaks_unmerged.json`, `regions.json` | `peaks.csv`                            |
//! | optimize  | scans, `neb.json`                   | `optimizer.json`                         |
//!
//! [`run_pipeline`] runs them all and adds `manifest.json` and the per-region
//! plot bundle under `plots/`.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::harness::{self, MatchRadius, ScoreReport, SyntheticSpec};
use crate::ingest::{parse_run, write_scans, write_spectra, ChromatogramRun, Geometry};
use crate::merge::{self, read_library, write_peak_table, PeakTable};
use crate::mixfit::{extract_peaks, grid, grid_coord, normalize, Objective, Peak, PeakModelFit};
use crate::neb::{fit_em, EmConfig, NebFit, NebSummary};
use crate::optimize::{
    choose_family, evaluate_cutoff, optimize_pipeline, regions_at, write_report, CutoffResult, OptimizationResult,
    RegionChoice, JEFFREYS_CUTOFFS,
};
use crate::segment::{write_regions, PeakRegion};
use crate::shapes::ShapeFamily;

pub const NEB_JSON: &str = "neb.json";
pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const REGIONS_JSON: &str = "regions.json";
pub const REGIONS_CSV: &str = "regions.csv";
pub const FITS_JSON: &str = "fits.json";
pub const PEAKS_UNMERGED_JSON: &str = "peaks_unmerged.json";
pub const PEAKS_UNMERGED_CSV: &str = "peaks_unmerged.csv";
pub const PEAKS_CSV: &str = "peaks.csv";
pub const OPTIMIZER_JSON: &str = "optimizer.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const PLOTS_DIR: &str = "plots";
pub const CURVE_SAMPLES: usize = 200;

/// A fixed setting or a request to search over it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Choice<T> {
    Fixed(T),
    Optimize,
}

impl<T: fmt::Display> fmt::Display for Choice<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Fixed(v) => v.fmt(f),
            Choice::Optimize => f.write_str("optimize"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scans: Option<PathBuf>,
    pub spectra: Option<PathBuf>,
    pub library: Option<PathBuf>,
    pub n1: usize,
    pub n2: usize,
    pub rt1_step: f64,
    pub rt2_step: f64,
    pub nu: Choice<f64>,
    /// Candidate cutoffs searched when `nu` is `optimize`.
    pub cutoffs: Vec<f64>,
    pub family: Choice<ShapeFamily>,
    pub objective: Objective,
    pub merge_cutoff: f64,
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub em_restarts: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let em = EmConfig::default();
        Self {
            scans: None,
            spectra: None,
            library: None,
            n1: 0,
            n2: 0,
            rt1_step: 1.0,
            rt2_step: 1.0,
            nu: Choice::Fixed(10.0),
            cutoffs: JEFFREYS_CUTOFFS.to_vec(),
            family: Choice::Optimize,
            objective: Objective::Aic,
            merge_cutoff: merge::DEFAULT_CUTOFF,
            em_tol: em.tol,
            em_max_iter: em.max_iter,
            em_restarts: em.restarts,
            seed: 0,
            threads: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl PipelineConfig {
    /// Applies one `key = value` setting; keys match the CLI flag names with
    /// `_` in place of `-`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "scans" => self.scans = Some(PathBuf::from(value)),
            "spectra" => self.spectra = Some(PathBuf::from(value)),
            "library" => self.library = Some(PathBuf::from(value)),
            "n1" => self.n1 = parse_num("n1", value)?,
            "n2" => self.n2 = parse_num("n2", value)?,
            "rt1_step" => self.rt1_step = parse_num("rt1_step", value)?,
            "rt2_step" => self.rt2_step = parse_num("rt2_step", value)?,
            "nu" => {
                self.nu = if value.eq_ignore_ascii_case("optimize") {
                    Choice::Optimize
                } else {
                    Choice::Fixed(parse_num("nu", value)?)
                }
            }
            "cutoffs" => {
                self.cutoffs = value
                    .split(',')
                    .map(|v| parse_num("cutoffs", v.trim()))
                    .collect::<Result<_>>()?
            }
            "family" => {
                self.family = if value.eq_ignore_ascii_case("optimize") {
                    Choice::Optimize
                } else {
                    Choice::Fixed(value.parse()?)
                }
            }
            "objective" => self.objective = value.parse()?,
            "merge_cutoff" => self.merge_cutoff = parse_num("merge_cutoff", value)?,
            "em_tol" => self.em_tol = parse_num("em_tol", value)?,
            "em_max_iter" => self.em_max_iter = parse_num("em_max_iter", value)?,
            "em_restarts" => self.em_restarts = parse_num("em_restarts", value)?,
            "seed" => self.seed = parse_num("seed", value)?,
            "threads" => self.threads = parse_num("threads", value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Flat `key = value` lines; `#` starts a comment.
    pub fn parse_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.parse_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Choice::Fixed(nu) = self.nu {
            if !(nu > 0.0) {
                return Err(Error::Config(format!("nu must be positive, got {nu}")));
            }
        }
        if self.cutoffs.is_empty() || self.cutoffs.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Config("cutoffs must be a non-empty list of positive numbers".into()));
        }
        if !(0.0..=1.0).contains(&self.merge_cutoff) {
            return Err(Error::Config(format!("merge_cutoff {} not in [0, 1]", self.merge_cutoff)));
        }
        if !(self.em_tol > 0.0) || self.em_max_iter == 0 {
            return Err(Error::Config("EM tolerance and iteration budget must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.n1, self.n2, self.rt1_step, self.rt2_step)
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            tol: self.em_tol,
            max_iter: self.em_max_iter,
            restarts: self.em_restarts,
            seed: self.seed,
        }
    }

    pub fn families(&self) -> Vec<ShapeFamily> {
        match self.family {
            Choice::Fixed(f) => vec![f],
            Choice::Optimize => ShapeFamily::ALL.to_vec(),
        }
    }

    pub fn candidate_cutoffs(&self) -> Vec<f64> {
        match self.nu {
            Choice::Fixed(nu) => vec![nu],
            Choice::Optimize => self.cutoffs.clone(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "scans": self.scans,
            "spectra": self.spectra,
            "library": self.library,
            "n1": self.n1,
            "n2": self.n2,
            "rt1_step": self.rt1_step,
            "rt2_step": self.rt2_step,
            "nu": self.nu.to_string(),
            "cutoffs": self.cutoffs,
            "family": self.family.to_string(),
            "objective": self.objective,
            "merge_cutoff": self.merge_cutoff,
            "em_tol": self.em_tol,
            "em_max_iter": self.em_max_iter,
            "em_restarts": self.em_restarts,
            "seed": self.seed,
            "threads": self.threads,
            "out": self.out,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Neb,
    Segment,
    Mixfit,
    Merge,
    Optimize,
    Simulate,
    Score,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {error}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub error: Error,
}

impl StageError {
    /// `{"stage": …, "error": …}` for machine consumption.
    pub fn to_json(&self) -> serde_json::Value {
        json!({ "stage": self.stage, "error": self.error.to_string() })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|error| StageError { stage, error })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn with_csv<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

pub fn load_run(cfg: &PipelineConfig) -> StageResult<ChromatogramRun> {
    cfg.validate().at(Stage::Config)?;
    let scans = cfg
        .scans
        .as_deref()
        .ok_or_else(|| Error::Config("no scan file given".into()))
        .at(Stage::Ingest)?;
    let geometry = cfg.geometry().at(Stage::Ingest)?;
    parse_run(scans, cfg.spectra.as_deref(), geometry).at(Stage::Ingest)
}

fn out(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

fn save_neb(cfg: &PipelineConfig, run: &ChromatogramRun, fit: &NebFit) -> Result<()> {
    write_json(&out(cfg, NEB_JSON), &NebSummary::from(fit))?;
    with_csv(&out(cfg, DIAGNOSTICS_CSV), |w| fit.write_diagnostics(&run.tic, w))
}

/// Rebuilds the per-scan NEB quantities from `neb.json`.
pub fn load_neb(cfg: &PipelineConfig, run: &ChromatogramRun) -> StageResult<NebFit> {
    let summary: NebSummary = read_json(&out(cfg, NEB_JSON)).at(Stage::Neb)?;
    let mut fit = NebFit::from_params(&run.tic, summary.params).at(Stage::Neb)?;
    fit.trace = summary.trace;
    fit.iterations = summary.iterations;
    fit.converged = summary.converged;
    Ok(fit)
}

fn fixed_nu(cfg: &PipelineConfig) -> StageResult<f64> {
    match cfg.nu {
        Choice::Fixed(nu) => Ok(nu),
        Choice::Optimize => Err(Error::Config("this stage needs a fixed nu".into())).at(Stage::Config),
    }
}

pub fn stage_fit_neb(cfg: &PipelineConfig) -> StageResult<NebFit> {
    in_pool(cfg.threads, || {
        let run = load_run(cfg)?;
        let fit = fit_em(&run.tic, &cfg.em()).at(Stage::Neb)?;
        save_neb(cfg, &run, &fit).at(Stage::Output)?;
        Ok(fit)
    })
}

pub fn stage_segment(cfg: &PipelineConfig) -> StageResult<Vec<PeakRegion>> {
    in_pool(cfg.threads, || {
        let nu = fixed_nu(cfg)?;
        let run = load_run(cfg)?;
        let fit = load_neb(cfg, &run)?;
        let regions = regions_at(&run, &fit, nu).at(Stage::Segment)?;
        save_regions(cfg, &regions).at(Stage::Output)?;
        Ok(regions)
    })
}

fn save_regions(cfg: &PipelineConfig, regions: &[PeakRegion]) -> Result<()> {
    write_json(&out(cfg, REGIONS_JSON), regions)?;
    with_csv(&out(cfg, REGIONS_CSV), |w| write_regions(regions, w))
}

/// Peaks of every fitted region, ids assigned in region order.
pub fn peaks_from(choices: &[RegionChoice], run: &ChromatogramRun) -> Result<Vec<Peak>> {
    let mut peaks = Vec::new();
    for c in choices {
        if let Some(fit) = &c.best {
            peaks.extend(extract_peaks(fit, &c.region, run)?);
        }
    }
    for (i, p) in peaks.iter_mut().enumerate() {
        p.id = i;
    }
    Ok(peaks)
}

fn save_picks(cfg: &PipelineConfig, choices: &[RegionChoice], peaks: &[Peak]) -> Result<()> {
    let fits: Vec<&PeakModelFit> = choices.iter().filter_map(|c| c.best.as_ref()).collect();
    write_json(&out(cfg, FITS_JSON), &fits)?;
    write_json(&out(cfg, PEAKS_UNMERGED_JSON), peaks)?;
    with_csv(&out(cfg, PEAKS_UNMERGED_CSV), |w| write_peak_table(&PeakTable::unmerged(peaks.to_vec()), None, w))
}

pub fn stage_pick(cfg: &PipelineConfig) -> StageResult<Vec<Peak>> {
    in_pool(cfg.threads, || {
        let run = load_run(cfg)?;
        let regions: Vec<PeakRegion> = read_json(&out(cfg, REGIONS_JSON)).at(Stage::Segment)?;
        let families = cfg.families();
        let choices: Vec<RegionChoice> = regions
            .iter()
            .map(|r| choose_family(r, &families, cfg.objective, cfg.seed))
            .collect();
        let peaks = peaks_from(&choices, &run).at(Stage::Mixfit)?;
        save_picks(cfg, &choices, &peaks).at(Stage::Output)?;
        Ok(peaks)
    })
}

fn load_library(cfg: &PipelineConfig) -> Result<Option<Vec<merge::LibraryEntry>>> {
    cfg.library.as_deref().map(|p| read_library(open(p)?)).transpose()
}

fn save_table(cfg: &PipelineConfig, table: &PeakTable) -> Result<()> {
    let library = load_library(cfg)?;
    with_csv(&out(cfg, PEAKS_CSV), |w| write_peak_table(table, library.as_deref(), w))
}

pub fn stage_merge(cfg: &PipelineConfig) -> StageResult<PeakTable> {
    in_pool(cfg.threads, || {
        cfg.validate().at(Stage::Config)?;
        let peaks: Vec<Peak> = read_json(&out(cfg, PEAKS_UNMERGED_JSON)).at(Stage::Mixfit)?;
        let regions: Vec<PeakRegion> = read_json(&out(cfg, REGIONS_JSON)).at(Stage::Segment)?;
        let table = merge::merge_all(&peaks, &regions, cfg.merge_cutoff).at(Stage::Merge)?;
        save_table(cfg, &table).at(Stage::Output)?;
        Ok(table)
    })
}

pub fn stage_optimize(cfg: &PipelineConfig) -> StageResult<OptimizationResult> {
    in_pool(cfg.threads, || {
        let run = load_run(cfg)?;
        let fit = load_neb(cfg, &run)?;
        let res = optimize_pipeline(&run, &fit, &cfg.candidate_cutoffs(), &cfg.families(), cfg.objective, cfg.seed)
            .at(Stage::Optimize)?;
        with_csv(&out(cfg, OPTIMIZER_JSON), |w| write_report(&res, w)).at(Stage::Output)?;
        Ok(res)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub nu: f64,
    pub n_regions: usize,
    pub n_fitted: usize,
    pub n_peaks_unmerged: usize,
    pub n_peaks: usize,
}

/// In-memory result of the fitting, picking and merging stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Present when the cutoff or the family was searched.
    pub optimization: Option<OptimizationResult>,
    pub chosen: CutoffResult,
    pub regions: Vec<PeakRegion>,
    /// Peaks before merging.
    pub peaks: Vec<Peak>,
    pub table: PeakTable,
}

/// Segmentation, mixture fitting and merging for a fitted NEB model.
pub fn detect(run: &ChromatogramRun, fit: &NebFit, cfg: &PipelineConfig) -> StageResult<Detection> {
    let families = cfg.families();
    let (optimization, chosen) = if cfg.nu == Choice::Optimize || families.len() > 1 {
        let res = optimize_pipeline(run, fit, &cfg.candidate_cutoffs(), &families, cfg.objective, cfg.seed)
            .at(Stage::Optimize)?;
        let chosen = res.chosen().clone();
        (Some(res), chosen)
    } else {
        let nu = fixed_nu(cfg)?;
        (None, evaluate_cutoff(run, fit, nu, &families, cfg.objective, cfg.seed).at(Stage::Mixfit)?)
    };
    let regions: Vec<PeakRegion> = chosen.regions.iter().map(|c| c.region.clone()).collect();
    let peaks = peaks_from(&chosen.regions, run).at(Stage::Mixfit)?;
    let table = merge::merge_all(&peaks, &regions, cfg.merge_cutoff).at(Stage::Merge)?;
    Ok(Detection {
        optimization,
        chosen,
        regions,
        peaks,
        table,
    })
}

/// Full run from the scan file to the merged peak table.
pub fn run_pipeline(cfg: &PipelineConfig) -> StageResult<RunSummary> {
    in_pool(cfg.threads, || {
        let run = load_run(cfg)?;
        let fit = fit_em(&run.tic, &cfg.em()).at(Stage::Neb)?;
        save_neb(cfg, &run, &fit).at(Stage::Output)?;
        let det = detect(&run, &fit, cfg)?;
        (|| -> Result<()> {
            if let Some(res) = &det.optimization {
                with_csv(&out(cfg, OPTIMIZER_JSON), |w| write_report(res, w))?;
            }
            save_regions(cfg, &det.regions)?;
            save_picks(cfg, &det.chosen.regions, &det.peaks)?;
            save_table(cfg, &det.table)?;
            emit_plot_data(&det.chosen.regions, &cfg.out.join(PLOTS_DIR))
        })()
        .at(Stage::Output)?;

        let summary = RunSummary {
            nu: det.chosen.nu,
            n_regions: det.chosen.n_regions,
            n_fitted: det.chosen.n_fitted,
            n_peaks_unmerged: det.peaks.len(),
            n_peaks: det.table.len(),
        };
        let manifest = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg.to_json(),
            "seed": cfg.seed,
            "neb": fit.params,
            "em_iterations": fit.iterations,
            "em_converged": fit.converged,
            "summary": summary,
        });
        write_json(&out(cfg, MANIFEST_JSON), &manifest).at(Stage::Output)?;
        Ok(summary)
    })
}

/// Name of the plot file for a region.
pub fn plot_file_name(region_id: usize) -> String {
    format!("region_{region_id:05}.csv")
}

/// One CSV per fitted region: `kind,t,col,value,is_apex,family` where `kind`
/// is `observed` (normalized intensity per column, 1-based `col`) or `curve`
/// (fitted mixture at [`CURVE_SAMPLES`] evenly spaced grid coordinates).
pub fn emit_plot_data(choices: &[RegionChoice], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for c in choices {
        let Some(fit) = &c.best else { continue };
        let path = dir.join(plot_file_name(c.region.id));
        with_csv(&path, |w| write_plot(fit, &c.region, w))?;
    }
    Ok(())
}

pub fn write_plot<W: Write>(fit: &PeakModelFit, region: &PeakRegion, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["kind", "t", "col", "value", "is_apex", "family"])?;
    let family = fit.family.to_string();
    let apexes: Vec<usize> = fit
        .components
        .iter()
        .map(|xi| {
            let off = crate::mixfit::offset_of(fit.family, xi.mode()).round();
            off.clamp(0.0, (region.len() - 1) as f64) as usize
        })
        .collect();
    let z = normalize(&region.values);
    for (l, (&t, &v)) in grid(fit.family, region.len()).iter().zip(&z).enumerate() {
        wtr.write_record([
            "observed".to_string(),
            t.to_string(),
            (region.col_start + l + 1).to_string(),
            v.to_string(),
            u8::from(apexes.contains(&l)).to_string(),
            family.clone(),
        ])?;
    }
    let (t0, t1) = (grid_coord(fit.family, 0), grid_coord(fit.family, region.len() - 1));
    for i in 0..CURVE_SAMPLES {
        let t = t0 + (t1 - t0) * i as f64 / (CURVE_SAMPLES - 1) as f64;
        wtr.write_record(["curve".to_string(), t.to_string(), String::new(), fit.curve(t).to_string(), "0".into(), family.clone()])?;
    }
    wtr.flush().map_err(|e| Error::io("<plot>", e))?;
    Ok(())
}

/// Writes `scans.csv`, `spectra.csv` and `truth.csv` for a synthetic spec.
pub fn simulate(spec_path: &Path, out_dir: &Path) -> StageResult<(ChromatogramRun, Vec<harness::TruthPeak>)> {
    let spec = open(spec_path).and_then(SyntheticSpec::from_json).at(Stage::Simulate)?;
    let (run, truth) = harness::generate(&spec).at(Stage::Simulate)?;
    (|| -> Result<()> {
        with_csv(&out_dir.join("scans.csv"), |w| write_scans(&run, w))?;
        with_csv(&out_dir.join("spectra.csv"), |w| write_spectra(&run, w))?;
        with_csv(&out_dir.join("truth.csv"), |w| harness::write_truth(&truth, w))
    })()
    .at(Stage::Output)?;
    Ok((run, truth))
}

/// Scores a peak table CSV against a truth CSV. Peak positions are mapped to
/// the grid through the nominal retention times of `geometry`.
pub fn score_files(peaks: &Path, truth: &Path, geometry: Geometry, radius: MatchRadius) -> StageResult<ScoreReport> {
    let records = open(peaks).and_then(merge::read_peak_table).at(Stage::Score)?;
    let truth = open(truth).and_then(harness::read_truth).at(Stage::Score)?;
    let detected: Vec<(usize, usize)> = records
        .iter()
        .map(|r| {
            let row = (r.rt1_s / geometry.rt1_step).round().max(1.0) as usize - 1;
            let col = (r.rt2_s / geometry.rt2_step).round().max(1.0) as usize - 1;
            (row, col)
        })
        .collect();
    Ok(harness::score(&detected, &truth, radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixfit::score;
    use crate::shapes::ComponentParams;

    #[test]
    fn config_parsing_and_overrides() {
        let mut cfg = PipelineConfig::default();
        cfg.parse_str("# run\nscans = a.csv\nn1=3\nn2 = 4 # trailing\nnu = optimize\nfamily = egmm\nobjective = mse\nmerge-cutoff = 0.9\n")
            .unwrap();
        assert_eq!(cfg.n1, 3);
        assert_eq!(cfg.nu, Choice::Optimize);
        assert_eq!(cfg.family, Choice::Fixed(ShapeFamily::Egmm));
        assert_eq!(cfg.objective, Objective::Mse);
        assert_eq!(cfg.merge_cutoff, 0.9);
        cfg.set("nu", "100").unwrap();
        assert_eq!(cfg.candidate_cutoffs(), vec![100.0]);
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.parse_str("no equals sign").is_err());
        cfg.set("nu", "-1").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_error_json_names_the_stage() {
        let mut cfg = PipelineConfig::default();
        cfg.set("scans", "/nonexistent/scans.csv").unwrap();
        cfg.n1 = 2;
        cfg.n2 = 2;
        let err = load_run(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Ingest);
        assert_eq!(err.to_json()["stage"], "ingest");
    }

    fn toy_fit() -> (PeakModelFit, PeakRegion) {
        let region = PeakRegion {
            id: 3,
            row: 1,
            region_index: 0,
            col_start: 4,
            col_end: 11,
            values: vec![1.0, 2.0, 4.0, 6.0, 5.0, 3.0, 2.0, 1.0],
        };
        let fit = PeakModelFit {
            region_id: 3,
            family: ShapeFamily::Gmm,
            s_hat: 1,
            weights: vec![1.0],
            components: vec![ComponentParams::Gaussian { mean: 4.2, sd: 1.7 }],
            tau2: 1e-4,
            ss: 8e-4,
            n: 8,
            scores: score(8e-4, 8, 3),
        };
        (fit, region)
    }

    #[test]
    fn plot_bundle_row_counts() {
        let (fit, region) = toy_fit();
        let mut buf = Vec::new();
        write_plot(&fit, &region, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("observed")).count(), 8);
        assert_eq!(text.lines().filter(|l| l.starts_with("curve")).count(), CURVE_SAMPLES);
        for line in text.lines().filter(|l| l.starts_with("curve")) {
            let f: Vec<&str> = line.split(',').collect();
            let t: f64 = f[1].parse().unwrap();
            let v: f64 = f[3].parse().unwrap();
            assert!((v - fit.curve(t)).abs() <= 1e-10);
        }
        assert_eq!(text.lines().filter(|l| l.starts_with("observed") && l.contains(",1,GMM")).count(), 1);

        let dir = tempfile::tempdir().unwrap();
        emit_plot_data(&[], dir.path()).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
