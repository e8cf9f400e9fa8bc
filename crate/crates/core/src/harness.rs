//! Seeded synthetic chromatograms and detection scoring.
//!
//! The background of every scan is drawn from the NEB model; planted peaks
//! add deterministic shapes from [`crate::shapes`], scaled so each reaches its
//! target height at its apex column. Every planted compound gets its own
//! random mass spectrum, and a scan's spectrum carries the planted ions only.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ChromatogramRun, Geometry, Spectrum};
use crate::neb::{sample, NebParams};
use crate::shapes::{ComponentParams, ShapeFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPeak {
    /// 0-based row of the apex.
    pub row: usize,
    /// 0-based column of the apex.
    pub col: usize,
    /// Shape in column units; it is shifted so its mode lands on `col`.
    pub shape: ComponentParams,
    pub height: f64,
    /// Relative heights on consecutive rows, centered on `row`.
    #[serde(default = "single_row")]
    pub row_profile: Vec<f64>,
    pub spectrum_id: usize,
}

fn single_row() -> Vec<f64> {
    vec![1.0]
}

impl PlantedPeak {
    fn shape_mode(&self) -> f64 {
        self.shape.mode()
    }

    /// Contribution at (row, col), zero outside the row profile.
    pub fn value_at(&self, row: usize, col: usize) -> f64 {
        let half = (self.row_profile.len() / 2) as isize;
        let k = row as isize - self.row as isize + half;
        if k < 0 || k as usize >= self.row_profile.len() {
            return 0.0;
        }
        let m = self.shape_mode();
        let t = col as f64 - self.col as f64 + m;
        let peak = self.shape.pdf(m);
        self.height * self.row_profile[k as usize] * self.shape.pdf(t) / peak
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n1: usize,
    pub n2: usize,
    #[serde(default = "one")]
    pub rt1_step: f64,
    #[serde(default = "one")]
    pub rt2_step: f64,
    pub neb: NebParams,
    #[serde(default)]
    pub peaks: Vec<PlantedPeak>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.n1, self.n2, self.rt1_step, self.rt2_step)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        let b = &self.neb;
        if !(b.mu.is_finite() && b.sigma2 > 0.0 && b.sigma2.is_finite() && b.phi > 0.0 && b.phi.is_finite() && (0.0..1.0).contains(&b.r)) {
            return Err(Error::Config(format!("invalid background parameters {b:?}")));
        }
        for (i, p) in self.peaks.iter().enumerate() {
            if p.row >= self.n1 || p.col >= self.n2 {
                return Err(Error::Config(format!("planted peak {i} at ({}, {}) is outside the matrix", p.row, p.col)));
            }
            p.shape.validate()?;
            if !(p.height > 0.0) || p.row_profile.is_empty() || p.row_profile.iter().any(|&h| !(h >= 0.0)) {
                return Err(Error::Config(format!("planted peak {i} needs a positive height and row profile")));
            }
        }
        Ok(())
    }

    pub fn from_json<R: Read>(r: R) -> Result<Self> {
        let spec: Self = serde_json::from_reader(r)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPeak {
    pub row: usize,
    pub col: usize,
    pub height: f64,
    pub family: ShapeFamily,
    pub spectrum_id: usize,
}

/// Random spectrum for compound `id`: 6–14 distinct unit m/z values in
/// 40..=400 with unit-sum intensities.
pub fn compound_spectrum(seed: u64, id: usize) -> Spectrum {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_u64.wrapping_mul(id as u64 + 1));
    let n = rng.random_range(6..=14);
    let mut mz: Vec<u32> = Vec::with_capacity(n);
    while mz.len() < n {
        let m = rng.random_range(40..=400);
        if !mz.contains(&m) {
            mz.push(m);
        }
    }
    mz.sort_unstable();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    Spectrum::new(mz.into_iter().zip(w).map(|(m, x)| (m as f64, x / total)).collect())
}

/// Background from the NEB model plus planted contributions; negative draws
/// are clipped at zero.
pub fn generate(spec: &SyntheticSpec) -> Result<(ChromatogramRun, Vec<TruthPeak>)> {
    spec.validate()?;
    let g = spec.geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tic = sample(&spec.neb, g.len(), &mut rng);
    let compounds: Vec<Spectrum> = spec.peaks.iter().map(|p| compound_spectrum(spec.seed, p.spectrum_id)).collect();
    let mut ions: Vec<Vec<(f64, f64)>> = vec![Vec::new(); g.len()];
    for (p, comp) in spec.peaks.iter().zip(&compounds) {
        for row in 0..g.n1 {
            for col in 0..g.n2 {
                let v = p.value_at(row, col);
                if v > 0.0 {
                    let scan = g.scan_index(row, col);
                    tic[scan] += v;
                    ions[scan].extend(comp.peaks.iter().map(|&(mz, x)| (mz, x * v)));
                }
            }
        }
    }
    for x in &mut tic {
        *x = x.max(0.0);
    }
    let spectra = ions
        .into_iter()
        .map(|mut v| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64)> = Vec::with_capacity(v.len());
            for (mz, x) in v {
                match merged.last_mut() {
                    Some(last) if last.0 == mz => last.1 += x,
                    _ => merged.push((mz, x)),
                }
            }
            Spectrum::new(merged)
        })
        .collect();
    let run = ChromatogramRun::new(g, tic, Some(spectra))?;
    let truth = spec
        .peaks
        .iter()
        .map(|p| TruthPeak {
            row: p.row,
            col: p.col,
            height: p.height,
            family: p.shape.family(),
            spectrum_id: p.spectrum_id,
        })
        .collect();
    Ok((run, truth))
}

/// `row,col,height,family` with 1-based rows and columns.
pub fn write_truth<W: Write>(truth: &[TruthPeak], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["row", "col", "height", "family"])?;
    for t in truth {
        wtr.write_record([(t.row + 1).to_string(), (t.col + 1).to_string(), t.height.to_string(), t.family.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<truth>", e))?;
    Ok(())
}

#[derive(Deserialize)]
struct TruthRow {
    row: usize,
    col: usize,
    height: f64,
    family: String,
}

/// Reads a truth CSV; every row is treated as its own compound.
pub fn read_truth<R: Read>(r: R) -> Result<Vec<TruthPeak>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<TruthRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedRow {
            line: i + 2,
            reason: e.to_string(),
        })?;
        if row.row == 0 || row.col == 0 {
            return Err(Error::MalformedRow {
                line: i + 2,
                reason: "rows and columns are 1-based".into(),
            });
        }
        out.push(TruthPeak {
            row: row.row - 1,
            col: row.col - 1,
            height: row.height,
            family: row.family.parse()?,
            spectrum_id: i,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRadius {
    pub rows: usize,
    pub cols: usize,
}

impl Default for MatchRadius {
    fn default() -> Self {
        Self { rows: 1, cols: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Planted peaks matched one-to-one by a detection ("Standard").
    pub standard: usize,
    /// Distinct planted compounds within radius of at least one detection.
    pub unique: usize,
    /// Detected peaks.
    pub peaks: usize,
    pub n_truth: usize,
    pub sur: f64,
    pub spr: f64,
    pub upr: f64,
}

impl ScoreReport {
    pub fn false_positives(&self) -> usize {
        self.peaks - self.standard
    }

    pub fn recall(&self) -> f64 {
        if self.n_truth == 0 {
            0.0
        } else {
            self.standard as f64 / self.n_truth as f64
        }
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// (SUR, SPR, UPR) = (Standard/Unique, Standard/Peak, Unique/Peak) × 100, with
/// zero denominators mapping to 0.
pub fn score_counts(standard: usize, unique: usize, peaks: usize) -> (f64, f64, f64) {
    (pct(standard, unique), pct(standard, peaks), pct(unique, peaks))
}

/// Greedy one-to-one matching of detections `(row, col)` to planted peaks,
/// closest pairs first (squared grid distance, then detection and truth
/// order).
pub fn score(detected: &[(usize, usize)], truth: &[TruthPeak], radius: MatchRadius) -> ScoreReport {
    let within = |d: (usize, usize), t: &TruthPeak| d.0.abs_diff(t.row) <= radius.rows && d.1.abs_diff(t.col) <= radius.cols;
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &d) in detected.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            if within(d, t) {
                let dist = d.0.abs_diff(t.row).pow(2) + d.1.abs_diff(t.col).pow(2);
                pairs.push((dist, i, j));
            }
        }
    }
    pairs.sort_unstable();
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut standard = 0;
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            standard += 1;
        }
    }
    let mut seen: Vec<usize> = truth
        .iter()
        .filter(|t| detected.iter().any(|&d| within(d, t)))
        .map(|t| t.spectrum_id)
        .collect();
    seen.sort_unstable();
    seen.dedup();
    let unique = seen.len();
    let (sur, spr, upr) = score_counts(standard, unique, detected.len());
    ScoreReport {
        standard,
        unique,
        peaks: detected.len(),
        n_truth: truth.len(),
        sur,
        spr,
        upr,
    }
}
