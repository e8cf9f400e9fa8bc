//! Trial-and-error search over the Bayes-factor cutoff ν and the per-region
//! shape family.
//!
//! For each candidate ν the processed matrix is re-segmented, every region
//! takes the family with the smallest objective, and ν̃ minimizes the sum of
//! those per-region minima. Regions with no feasible fit contribute zero.
//! Region sets differ between cutoffs, so the per-ν region counts are
//! reported next to the totals.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{to_matrix, ChromatogramRun};
use crate::mixfit::{select_components, Objective, PeakModelFit};
use crate::neb::NebFit;
use crate::segment::{extract_regions, PeakRegion};
use crate::shapes::ShapeFamily;

pub const JEFFREYS_CUTOFFS: [f64; 3] = [1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyScore {
    pub family: ShapeFamily,
    pub s_hat: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionChoice {
    pub region: PeakRegion,
    /// Objective of every family with a feasible fit, in family order.
    pub scores: Vec<FamilyScore>,
    /// Winning fit; `None` when no family is feasible.
    pub best: Option<PeakModelFit>,
}

impl RegionChoice {
    pub fn objective(&self, objective: Objective) -> f64 {
        self.best.as_ref().map_or(0.0, |f| f.objective(objective))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffResult {
    pub nu: f64,
    pub total: f64,
    pub n_regions: usize,
    pub n_fitted: usize,
    pub regions: Vec<RegionChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub objective: Objective,
    pub families: Vec<ShapeFamily>,
    pub nu_tilde: f64,
    pub candidates: Vec<CutoffResult>,
}

impl OptimizationResult {
    pub fn chosen(&self) -> &CutoffResult {
        self.candidates.iter().find(|c| c.nu == self.nu_tilde).expect("nu_tilde is a candidate")
    }
}

/// Segments the processed matrix at cutoff `nu`.
pub fn regions_at(run: &ChromatogramRun, fit: &NebFit, nu: f64) -> Result<Vec<PeakRegion>> {
    Ok(extract_regions(&to_matrix(run, &fit.processed(nu))?))
}

/// Fits every family to one region and keeps the smallest objective; ties
/// go to the family listed first.
pub fn choose_family(region: &PeakRegion, families: &[ShapeFamily], objective: Objective, seed: u64) -> RegionChoice {
    let fits: Vec<PeakModelFit> = families
        .par_iter()
        .filter_map(|&f| select_components(region, f, objective, seed).ok())
        .collect();
    let scores = fits
        .iter()
        .map(|f| FamilyScore {
            family: f.family,
            s_hat: f.s_hat,
            objective: f.objective(objective),
        })
        .collect();
    let mut best: Option<PeakModelFit> = None;
    for f in fits {
        if best.as_ref().is_none_or(|b| f.objective(objective) < b.objective(objective)) {
            best = Some(f);
        }
    }
    RegionChoice {
        region: region.clone(),
        scores,
        best,
    }
}

pub fn evaluate_cutoff(
    run: &ChromatogramRun,
    fit: &NebFit,
    nu: f64,
    families: &[ShapeFamily],
    objective: Objective,
    seed: u64,
) -> Result<CutoffResult> {
    let regions = regions_at(run, fit, nu)?;
    let choices: Vec<RegionChoice> = regions.par_iter().map(|r| choose_family(r, families, objective, seed)).collect();
    let total = choices.iter().map(|c| c.objective(objective)).sum();
    Ok(CutoffResult {
        nu,
        total,
        n_regions: regions.len(),
        n_fitted: choices.iter().filter(|c| c.best.is_some()).count(),
        regions: choices,
    })
}

/// ν̃ = argmin over `cutoffs` of the summed per-region minimum objective;
/// ties keep the earlier cutoff. A single cutoff gives the fixed-ν mode and
/// a single family the fixed-family mode.
pub fn optimize_pipeline(
    run: &ChromatogramRun,
    fit: &NebFit,
    cutoffs: &[f64],
    families: &[ShapeFamily],
    objective: Objective,
    seed: u64,
) -> Result<OptimizationResult> {
    if cutoffs.is_empty() || families.is_empty() {
        return Err(Error::Config("optimizer needs at least one cutoff and one family".into()));
    }
    if let Some(nu) = cutoffs.iter().find(|&&nu| !(nu > 0.0)) {
        return Err(Error::Config(format!("cutoff {nu} must be positive")));
    }
    let candidates: Vec<CutoffResult> = cutoffs
        .par_iter()
        .map(|&nu| evaluate_cutoff(run, fit, nu, families, objective, seed))
        .collect::<Result<_>>()?;
    if candidates.iter().all(|c| c.n_fitted == 0) {
        return Err(Error::NoFeasibleFit);
    }
    let mut nu_tilde = candidates[0].nu;
    let mut best = candidates[0].total;
    for c in &candidates[1..] {
        if c.total < best {
            best = c.total;
            nu_tilde = c.nu;
        }
    }
    Ok(OptimizationResult {
        objective,
        families: families.to_vec(),
        nu_tilde,
        candidates,
    })
}

#[derive(Serialize)]
struct ReportRegion<'a> {
    region_id: usize,
    row: usize,
    col_start: usize,
    col_end: usize,
    family: Option<ShapeFamily>,
    s_hat: Option<usize>,
    objective: Option<f64>,
    scores: &'a [FamilyScore],
}

#[derive(Serialize)]
struct ReportCutoff<'a> {
    nu: f64,
    total: f64,
    n_regions: usize,
    n_fitted: usize,
    regions: Vec<ReportRegion<'a>>,
}

#[derive(Serialize)]
struct Report<'a> {
    objective: Objective,
    families: &'a [ShapeFamily],
    nu_tilde: f64,
    cutoffs: Vec<ReportCutoff<'a>>,
}

/// Per-ν totals and per-region choices as JSON (1-based rows and columns).
pub fn write_report<W: Write>(result: &OptimizationResult, w: W) -> Result<()> {
    let report = Report {
        objective: result.objective,
        families: &result.families,
        nu_tilde: result.nu_tilde,
        cutoffs: result
            .candidates
            .iter()
            .map(|c| ReportCutoff {
                nu: c.nu,
                total: c.total,
                n_regions: c.n_regions,
                n_fitted: c.n_fitted,
                regions: c
                    .regions
                    .iter()
                    .map(|r| ReportRegion {
                        region_id: r.region.id,
                        row: r.region.row + 1,
                        col_start: r.region.col_start + 1,
                        col_end: r.region.col_end + 1,
                        family: r.best.as_ref().map(|f| f.family),
                        s_hat: r.best.as_ref().map(|f| f.s_hat),
                        objective: r.best.as_ref().map(|f| f.objective(result.objective)),
                        scores: &r.scores,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_writer_pretty(w, &report)?;
    Ok(())
}
