//! Scan-stream ingestion and the retention-time grid.
//!
//! Scans are stored second-dimension-fastest: scan `i` (0-based) sits at row
//! `i / n2` and column `i % n2` of the N₁ × N₂ grid.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid shape and sampling periods of a GC×GC run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// First-dimension modulations (matrix rows).
    pub n1: usize,
    /// Second-dimension scans per modulation (matrix columns).
    pub n2: usize,
    /// Modulation period, seconds.
    pub rt1_step: f64,
    /// Second-dimension sampling interval, seconds.
    pub rt2_step: f64,
}

impl Geometry {
    pub fn new(n1: usize, n2: usize, rt1_step: f64, rt2_step: f64) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::Config("n1 and n2 must be positive".into()));
        }
        if !(rt1_step > 0.0 && rt2_step > 0.0) || !rt1_step.is_finite() || !rt2_step.is_finite() {
            return Err(Error::Config("retention-time steps must be positive".into()));
        }
        Ok(Self {
            n1,
            n2,
            rt1_step,
            rt2_step,
        })
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 0-based (row, col) of a 0-based scan index.
    pub fn position(&self, scan: usize) -> (usize, usize) {
        (scan / self.n2, scan % self.n2)
    }

    pub fn scan_index(&self, row: usize, col: usize) -> usize {
        row * self.n2 + col
    }

    /// Nominal retention times of a 0-based grid cell: modulation k (1-based)
    /// starts at k·rt1_step, and the l-th (1-based) scan in it sits at
    /// l·rt2_step.
    pub fn nominal_rt(&self, row: usize, col: usize) -> (f64, f64) {
        ((row + 1) as f64 * self.rt1_step, (col + 1) as f64 * self.rt2_step)
    }
}

/// Sparse centroided mass spectrum, m/z strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub peaks: Vec<(f64, f64)>,
}

impl Spectrum {
    pub fn new(peaks: Vec<(f64, f64)>) -> Self {
        Self { peaks }
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.peaks.windows(2).all(|w| w[0].0 < w[1].0)
    }

    pub fn total_intensity(&self) -> f64 {
        self.peaks.iter().map(|p| p.1).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromatogramRun {
    pub geometry: Geometry,
    /// Total ion current per scan.
    pub tic: Vec<f64>,
    /// Recorded first-dimension retention time per scan, seconds.
    pub rt1: Vec<f64>,
    /// Recorded second-dimension retention time per scan, seconds.
    pub rt2: Vec<f64>,
    pub spectra: Vec<Spectrum>,
}

impl ChromatogramRun {
    /// Builds a run with nominal retention times, validating every invariant.
    pub fn new(geometry: Geometry, tic: Vec<f64>, spectra: Option<Vec<Spectrum>>) -> Result<Self> {
        let n = geometry.len();
        if tic.len() != n {
            return Err(Error::GeometryMismatch {
                rows: tic.len(),
                n1: geometry.n1,
                n2: geometry.n2,
                expected: n,
            });
        }
        let (rt1, rt2): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|i| {
                let (r, c) = geometry.position(i);
                geometry.nominal_rt(r, c)
            })
            .unzip();
        let run = Self {
            geometry,
            tic,
            rt1,
            rt2,
            spectra: spectra.unwrap_or_else(|| vec![Spectrum::default(); n]),
        };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.geometry.len();
        if self.tic.len() != n {
            return Err(Error::GeometryMismatch {
                rows: self.tic.len(),
                n1: self.geometry.n1,
                n2: self.geometry.n2,
                expected: n,
            });
        }
        for (i, &x) in self.tic.iter().enumerate() {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::MalformedRow {
                    line: i + 2,
                    reason: format!("tic {x} is negative or not finite"),
                });
            }
        }
        if self.spectra.len() != n || self.rt1.len() != n || self.rt2.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: self.spectra.len().min(self.rt1.len()).min(self.rt2.len()),
            });
        }
        for (i, s) in self.spectra.iter().enumerate() {
            if let Some(w) = s.peaks.windows(2).find(|w| w[0].0 >= w[1].0) {
                return Err(Error::UnsortedSpectrum { scan: i + 1, mz: w[1].0 });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tic.is_empty()
    }
}

/// N₁ × N₂ matrix of per-scan values, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicMatrix {
    pub n1: usize,
    pub n2: usize,
    data: Vec<f64>,
}

impl TicMatrix {
    pub fn from_values(n1: usize, n2: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n1 * n2 {
            return Err(Error::LengthMismatch {
                expected: n1 * n2,
                actual: values.len(),
            });
        }
        Ok(Self { n1, n2, data: values })
    }

    /// 0-based access.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n2 + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n2..(row + 1) * self.n2]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n2)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Reshapes a per-scan vector onto the run's retention-time grid.
pub fn to_matrix(run: &ChromatogramRun, values: &[f64]) -> Result<TicMatrix> {
    let g = run.geometry;
    TicMatrix::from_values(g.n1, g.n2, values.to_vec())
}

fn parse_field(field: Option<&str>, line: usize, name: &str) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::MalformedRow {
        line,
        reason: format!("missing field `{name}`"),
    })?;
    let v: f64 = raw.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("`{name}` value {raw:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            line,
            reason: format!("`{name}` value {raw:?} is not finite"),
        });
    }
    Ok(v)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// Reads a `rt1,rt2,tic` scan table.
pub fn read_scans<R: Read>(reader: R) -> Result<Vec<(f64, f64, f64)>> {
    let mut rdr = csv_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let rt1 = parse_field(rec.get(0), line, "rt1")?;
        let rt2 = parse_field(rec.get(1), line, "rt2")?;
        let tic = parse_field(rec.get(2), line, "tic")?;
        if tic < 0.0 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("negative intensity {tic}"),
            });
        }
        out.push((rt1, rt2, tic));
    }
    Ok(out)
}

/// Reads a sparse `scan_index,mz,intensity` table (1-based scan index) into
/// `n_scans` spectra.
pub fn read_spectra<R: Read>(reader: R, n_scans: usize) -> Result<Vec<Spectrum>> {
    let mut rdr = csv_reader(reader);
    let mut spectra = vec![Spectrum::default(); n_scans];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let raw_idx = rec.get(0).unwrap_or_default();
        let scan: usize = raw_idx.parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("scan_index {raw_idx:?} is not a positive integer"),
        })?;
        if scan == 0 || scan > n_scans {
            return Err(Error::MalformedRow {
                line,
                reason: format!("scan_index {scan} outside 1..={n_scans}"),
            });
        }
        let mz = parse_field(rec.get(1), line, "mz")?;
        let intensity = parse_field(rec.get(2), line, "intensity")?;
        if mz <= 0.0 || intensity < 0.0 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("invalid peak (mz {mz}, intensity {intensity})"),
            });
        }
        let s = &mut spectra[scan - 1];
        if let Some(&(last, _)) = s.peaks.last() {
            if mz <= last {
                return Err(Error::UnsortedSpectrum { scan, mz });
            }
        }
        s.peaks.push((mz, intensity));
    }
    Ok(spectra)
}

/// Parses a scan file (and optional spectra file) into a validated run.
pub fn parse_run(scan_file: &Path, spectra_file: Option<&Path>, geometry: Geometry) -> Result<ChromatogramRun> {
    let f = File::open(scan_file).map_err(|e| Error::io(scan_file, e))?;
    let scans = read_scans(BufReader::new(f))?;
    let n = geometry.len();
    if scans.len() != n {
        return Err(Error::GeometryMismatch {
            rows: scans.len(),
            n1: geometry.n1,
            n2: geometry.n2,
            expected: n,
        });
    }
    let spectra = match spectra_file {
        Some(p) => {
            let f = File::open(p).map_err(|e| Error::io(p, e))?;
            read_spectra(BufReader::new(f), n)?
        }
        None => vec![Spectrum::default(); n],
    };
    let mut tic = Vec::with_capacity(n);
    let mut rt1 = Vec::with_capacity(n);
    let mut rt2 = Vec::with_capacity(n);
    for (a, b, x) in scans {
        rt1.push(a);
        rt2.push(b);
        tic.push(x);
    }
    let run = ChromatogramRun {
        geometry,
        tic,
        rt1,
        rt2,
        spectra,
    };
    run.validate()?;
    Ok(run)
}

pub fn write_scans<W: Write>(run: &ChromatogramRun, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["rt1", "rt2", "tic"])?;
    for i in 0..run.len() {
        wtr.write_record([run.rt1[i].to_string(), run.rt2[i].to_string(), run.tic[i].to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<scans>", e))?;
    Ok(())
}

pub fn write_spectra<W: Write>(run: &ChromatogramRun, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["scan_index", "mz", "intensity"])?;
    for (i, s) in run.spectra.iter().enumerate() {
        for &(mz, inten) in &s.peaks {
            wtr.write_record([(i + 1).to_string(), mz.to_string(), inten.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<spectra>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(n1: usize, n2: usize) -> Geometry {
        Geometry::new(n1, n2, 5.0, 0.005).unwrap()
    }

    #[test]
    fn parse_four_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scans.csv");
        std::fs::write(&p, "rt1,rt2,tic\n5,0.005,1\n5,0.01,2\n10,0.005,3\n10,0.01,4\n").unwrap();
        let run = parse_run(&p, None, geom(2, 2)).unwrap();
        assert_eq!(run.len(), 4);
        assert_eq!(run.tic, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(run.spectra.iter().all(Spectrum::is_empty));
        // deterministic re-parse
        assert_eq!(parse_run(&p, None, geom(2, 2)).unwrap(), run);
    }

    #[test]
    fn five_rows_is_geometry_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scans.csv");
        std::fs::write(&p, "rt1,rt2,tic\n0,0,1\n0,0,2\n0,0,3\n0,0,4\n0,0,5\n").unwrap();
        assert!(matches!(
            parse_run(&p, None, geom(2, 2)),
            Err(Error::GeometryMismatch { rows: 5, expected: 4, .. })
        ));
    }

    #[test]
    fn negative_or_short_row_is_malformed() {
        let r = read_scans("rt1,rt2,tic\n1.0,-3.5\n".as_bytes());
        assert!(matches!(r, Err(Error::MalformedRow { line: 2, .. })));
        let r = read_scans("rt1,rt2,tic\n1.0,0.1,-3.5\n".as_bytes());
        assert!(matches!(r, Err(Error::MalformedRow { .. })));
        let r = read_scans("rt1,rt2,tic\n1.0,0.1,abc\n".as_bytes());
        assert!(matches!(r, Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn spectra_parsing() {
        let s = read_spectra("scan_index,mz,intensity\n1,50,10\n1,51.5,3\n3,70,1\n".as_bytes(), 3).unwrap();
        assert_eq!(s[0].peaks, vec![(50.0, 10.0), (51.5, 3.0)]);
        assert!(s[1].is_empty());
        assert_eq!(s[2].peaks, vec![(70.0, 1.0)]);

        let r = read_spectra("scan_index,mz,intensity\n1,50,10\n1,49,3\n".as_bytes(), 3);
        assert!(matches!(r, Err(Error::UnsortedSpectrum { scan: 1, .. })));
        let r = read_spectra("scan_index,mz,intensity\n4,50,10\n".as_bytes(), 3);
        assert!(matches!(r, Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = parse_run(Path::new("/nonexistent/scans.csv"), None, geom(1, 1));
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn to_matrix_layout() {
        let run = ChromatogramRun::new(geom(2, 2), vec![1.0, 2.0, 3.0, 4.0], None).unwrap();
        let m = to_matrix(&run, &run.tic).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0]);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert!(matches!(
            to_matrix(&run, &[1.0, 2.0, 3.0]),
            Err(Error::LengthMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn scan_csv_round_trip() {
        let tic = vec![0.5, 1.25, 3.0, 0.0, 7.0, 9.5];
        let spectra = vec![
            Spectrum::new(vec![(50.0, 1.0), (60.0, 2.0)]),
            Spectrum::default(),
            Spectrum::new(vec![(44.0, 0.5)]),
            Spectrum::default(),
            Spectrum::default(),
            Spectrum::new(vec![(100.0, 3.0)]),
        ];
        let run = ChromatogramRun::new(geom(2, 3), tic, Some(spectra)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("scans.csv");
        let mp = dir.path().join("spectra.csv");
        write_scans(&run, File::create(&sp).unwrap()).unwrap();
        write_spectra(&run, File::create(&mp).unwrap()).unwrap();
        let back = parse_run(&sp, Some(&mp), run.geometry).unwrap();
        assert_eq!(back, run);
    }

    proptest! {
        #[test]
        fn flatten_inverts_to_matrix(n1 in 1usize..8, n2 in 1usize..8, seed in any::<u64>()) {
            let n = n1 * n2;
            let v: Vec<f64> = (0..n).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f64) * 0.37).collect();
            let run = ChromatogramRun::new(geom(n1, n2), v.clone(), None).unwrap();
            let m = to_matrix(&run, &v).unwrap();
            prop_assert_eq!(m.flatten(), v.clone());
            for (i, x) in v.iter().enumerate() {
                let (r, c) = run.geometry.position(i);
                prop_assert_eq!(m.get(r, c).to_bits(), x.to_bits());
            }
        }
    }
}
