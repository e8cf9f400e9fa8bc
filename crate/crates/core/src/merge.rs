//! Grouping and spectral merging of peaks.
//!
//! A single compound often yields a peak in several consecutive modulations.
//! Peaks are grouped by connected components of their source regions under
//! 8-connectivity, and within a group every cluster of spectrally similar
//! peaks (single linkage at the cutoff) collapses onto its tallest member,
//! which inherits the summed area.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Spectrum;
use crate::mixfit::Peak;
use crate::segment::PeakRegion;

pub const DEFAULT_CUTOFF: f64 = 0.95;

fn binned(s: &Spectrum) -> BTreeMap<i64, f64> {
    let mut bins = BTreeMap::new();
    for &(mz, intensity) in &s.peaks {
        *bins.entry(mz.round() as i64).or_insert(0.0) += intensity;
    }
    bins
}

/// Cosine similarity of unit-m/z-binned intensities over the union of bins.
pub fn spectral_similarity(a: &Spectrum, b: &Spectrum) -> Result<f64> {
    let (a, b) = (binned(a), binned(b));
    let norm = |m: &BTreeMap<i64, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
    let (na, nb) = (norm(&a), norm(&b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::EmptySpectrum);
    }
    let dot: f64 = a.iter().filter_map(|(k, va)| b.get(k).map(|vb| va * vb)).sum();
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakGroup {
    /// Indices into the peak list, ascending.
    pub peak_ids: Vec<usize>,
    /// Region ids of the connected component, ascending.
    pub region_ids: Vec<usize>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// 8-connectivity: rows at most one apart and column ranges overlapping or
/// touching.
pub fn regions_adjacent(a: &PeakRegion, b: &PeakRegion) -> bool {
    a.row.abs_diff(b.row) <= 1 && a.col_start <= b.col_end + 1 && b.col_start <= a.col_end + 1
}

/// Groups peaks by connected components of the region adjacency graph.
/// Peaks reference regions through [`Peak::region_id`], which must be the
/// position of the region in `regions`. Components without peaks are
/// dropped; groups are ordered by their first peak.
pub fn build_groups(peaks: &[Peak], regions: &[PeakRegion]) -> Result<Vec<PeakGroup>> {
    if let Some(p) = peaks.iter().find(|p| regions.get(p.region_id).is_none_or(|r| r.id != p.region_id)) {
        return Err(Error::InvalidParams(format!("peak {} references unknown region {}", p.id, p.region_id)));
    }
    let mut uf = UnionFind::new(regions.len());
    let mut by_row: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in regions.iter().enumerate() {
        by_row.entry(r.row).or_default().push(i);
    }
    for (&row, members) in &by_row {
        for next_row in [row, row + 1] {
            let Some(others) = by_row.get(&next_row) else { continue };
            for &i in members {
                for &j in others {
                    if (i < j || next_row != row) && regions_adjacent(&regions[i], &regions[j]) {
                        uf.union(i, j);
                    }
                }
            }
        }
    }
    let mut comps: BTreeMap<usize, PeakGroup> = BTreeMap::new();
    for (pi, p) in peaks.iter().enumerate() {
        let root = uf.find(p.region_id);
        comps
            .entry(root)
            .or_insert_with(|| PeakGroup {
                peak_ids: Vec::new(),
                region_ids: Vec::new(),
            })
            .peak_ids
            .push(pi);
    }
    for ri in 0..regions.len() {
        let root = uf.find(ri);
        if let Some(g) = comps.get_mut(&root) {
            g.region_ids.push(ri);
        }
    }
    let mut groups: Vec<PeakGroup> = comps.into_values().collect();
    groups.sort_by_key(|g| g.peak_ids[0]);
    Ok(groups)
}

/// A merged peak with the ids of the peaks it absorbed (itself included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedPeak {
    pub peak: Peak,
    pub members: Vec<usize>,
}

/// Single-linkage clustering of `members` at `cutoff`; each cluster becomes
/// its tallest peak (lowest id on ties) carrying the summed area. Pairs with
/// an empty spectrum never link.
pub fn merge_peaks(members: &[Peak], cutoff: f64) -> Vec<MergedPeak> {
    let n = members.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let linked: Vec<(usize, usize)> = pairs
        .into_par_iter()
        .filter(|&(i, j)| spectral_similarity(&members[i].spectrum, &members[j].spectrum).is_ok_and(|s| s >= cutoff))
        .collect();
    let mut uf = UnionFind::new(n);
    for (i, j) in linked {
        uf.union(i, j);
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = uf.find(i);
        clusters.entry(root).or_default().push(i);
    }
    clusters
        .into_values()
        .map(|idx| {
            let rep = idx
                .iter()
                .copied()
                .max_by(|&a, &b| members[a].height.total_cmp(&members[b].height).then(members[b].id.cmp(&members[a].id)))
                .expect("non-empty cluster");
            let mut peak = members[rep].clone();
            peak.area = idx.iter().map(|&i| members[i].area).sum();
            peak.abundance = idx.iter().map(|&i| members[i].abundance).sum();
            MergedPeak {
                peak,
                members: idx.iter().map(|&i| members[i].id).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakTable {
    pub peaks: Vec<Peak>,
    /// Ids of the input peaks merged into each output peak.
    pub provenance: Vec<Vec<usize>>,
    pub group_ids: Vec<usize>,
}

impl PeakTable {
    /// Table of unmerged peaks, each its own group.
    pub fn unmerged(peaks: Vec<Peak>) -> Self {
        let provenance = peaks.iter().map(|p| vec![p.id]).collect();
        let group_ids = (0..peaks.len()).collect();
        Self { peaks, provenance, group_ids }
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.peaks.iter().map(|p| p.area).sum()
    }
}

/// Groups, then merges every group independently.
pub fn merge_all(peaks: &[Peak], regions: &[PeakRegion], cutoff: f64) -> Result<PeakTable> {
    let groups = build_groups(peaks, regions)?;
    let merged: Vec<Vec<MergedPeak>> = groups
        .par_iter()
        .map(|g| {
            let members: Vec<Peak> = g.peak_ids.iter().map(|&i| peaks[i].clone()).collect();
            merge_peaks(&members, cutoff)
        })
        .collect();
    let mut table = PeakTable {
        peaks: Vec::new(),
        provenance: Vec::new(),
        group_ids: Vec::new(),
    };
    for (gid, ms) in merged.into_iter().enumerate() {
        for m in ms {
            table.peaks.push(m.peak);
            table.provenance.push(m.members);
            table.group_ids.push(gid);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub compound: String,
    pub spectrum: Spectrum,
}

#[derive(Deserialize)]
struct LibraryRow {
    compound: String,
    mz: f64,
    intensity: f64,
}

/// Reads `compound,mz,intensity` rows; entries keep first-appearance order
/// and duplicate m/z values within a compound are summed.
pub fn read_library<R: Read>(reader: R) -> Result<Vec<LibraryEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut peaks: BTreeMap<String, BTreeMap<i64, (f64, f64)>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<LibraryRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedRow {
            line: i + 2,
            reason: e.to_string(),
        })?;
        if !(row.intensity >= 0.0) {
            return Err(Error::MalformedRow {
                line: i + 2,
                reason: format!("negative intensity {}", row.intensity),
            });
        }
        if !peaks.contains_key(&row.compound) {
            order.push(row.compound.clone());
        }
        let e = peaks.entry(row.compound).or_default().entry((row.mz * 1e6).round() as i64).or_insert((row.mz, 0.0));
        e.1 += row.intensity;
    }
    Ok(order
        .into_iter()
        .map(|c| {
            let spectrum = Spectrum::new(peaks[&c].values().copied().collect());
            LibraryEntry { compound: c, spectrum }
        })
        .collect())
}

/// Best library hit for a spectrum; ties keep the earlier entry.
pub fn best_match<'a>(spectrum: &Spectrum, library: &'a [LibraryEntry]) -> Option<(&'a LibraryEntry, f64)> {
    let mut best: Option<(&LibraryEntry, f64)> = None;
    for e in library {
        if let Ok(s) = spectral_similarity(spectrum, &e.spectrum) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((e, s));
            }
        }
    }
    best
}

/// `peak_id,rt1_s,rt2_s,height,area,abundance,merged_count,group_id`, plus
/// `library_match,match_score` when a library is given. Ids are 1-based.
pub fn write_peak_table<W: Write>(table: &PeakTable, library: Option<&[LibraryEntry]>, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["peak_id", "rt1_s", "rt2_s", "height", "area", "abundance", "merged_count", "group_id"];
    if library.is_some() {
        header.extend(["library_match", "match_score"]);
    }
    wtr.write_record(&header)?;
    for (i, p) in table.peaks.iter().enumerate() {
        let mut rec = vec![
            (p.id + 1).to_string(),
            p.rt1.to_string(),
            p.rt2.to_string(),
            p.height.to_string(),
            p.area.to_string(),
            p.abundance.to_string(),
            table.provenance[i].len().to_string(),
            (table.group_ids[i] + 1).to_string(),
        ];
        if let Some(lib) = library {
            match best_match(&p.spectrum, lib) {
                Some((e, s)) => rec.extend([e.compound.clone(), s.to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<peak table>", e))?;
    Ok(())
}

/// One row of a peak table CSV as read back.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PeakRecord {
    pub peak_id: usize,
    pub rt1_s: f64,
    pub rt2_s: f64,
    pub height: f64,
    pub area: f64,
    pub abundance: f64,
    pub merged_count: usize,
    pub group_id: usize,
}

pub fn read_peak_table<R: Read>(reader: R) -> Result<Vec<PeakRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<PeakRecord>().enumerate() {
        out.push(row.map_err(|e| Error::MalformedRow {
            line: i + 2,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
