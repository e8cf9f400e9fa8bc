//! Peak regions: maximal runs of nonzero processed intensity within a
//! first-dimension row, plus the first-derivative test that bounds how many
//! peaks each region may host.
//!
//! Rows and columns are 0-based here; the CSV dump writes them 1-based.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TicMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRegion {
    /// Position in the region list returned by [`extract_regions`].
    pub id: usize,
    pub row: usize,
    /// Index of the region within its row.
    pub region_index: usize,
    pub col_start: usize,
    /// Inclusive.
    pub col_end: usize,
    /// Strictly positive intensities, one per column.
    pub values: Vec<f64>,
}

impl PeakRegion {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Upper bound on mixture components: the FDT maximum count, floored at 1.
    pub fn s_max(&self) -> usize {
        fdt(&self.values).len().max(1)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn contains_col(&self, col: usize) -> bool {
        (self.col_start..=self.col_end).contains(&col)
    }
}

fn row_regions(row: usize, values: &[f64]) -> Vec<PeakRegion> {
    let mut out = Vec::new();
    let mut l = 0;
    while l < values.len() {
        if values[l] > 0.0 {
            let start = l;
            while l < values.len() && values[l] > 0.0 {
                l += 1;
            }
            out.push(PeakRegion {
                id: 0,
                row,
                region_index: out.len(),
                col_start: start,
                col_end: l - 1,
                values: values[start..l].to_vec(),
            });
        } else {
            l += 1;
        }
    }
    out
}

/// Splits every row into maximal runs of positive entries, ordered by
/// (row, col_start).
pub fn extract_regions(d: &TicMatrix) -> Vec<PeakRegion> {
    let per_row: Vec<Vec<PeakRegion>> = (0..d.n1).into_par_iter().map(|k| row_regions(k, d.row(k))).collect();
    let mut regions: Vec<PeakRegion> = per_row.into_iter().flatten().collect();
    for (i, r) in regions.iter_mut().enumerate() {
        r.id = i;
    }
    regions
}

/// Strict interior local maxima: `z[l-1] < z[l] > z[l+1]`.
pub fn fdt(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&l| values[l - 1] - values[l] < 0.0 && values[l] - values[l + 1] > 0.0)
        .collect()
}

/// `row,region_index,col_start,col_end,length,s_max` with 1-based indices.
pub fn write_regions<W: Write>(regions: &[PeakRegion], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["row", "region_index", "col_start", "col_end", "length", "s_max"])?;
    for r in regions {
        wtr.write_record([
            (r.row + 1).to_string(),
            (r.region_index + 1).to_string(),
            (r.col_start + 1).to_string(),
            (r.col_end + 1).to_string(),
            r.len().to_string(),
            r.s_max().to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<regions>", e))?;
    Ok(())
}
