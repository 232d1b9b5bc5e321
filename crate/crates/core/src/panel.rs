//! Multivariate time-series panels and their CSV form.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{invalid, Result, SpvarError};
use crate::model::default_names;

/// `T × N` panel, row `t` holding `y_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPanel {
    data: DMatrix<f64>,
    names: Vec<String>,
    standardized: bool,
    means: Option<Vec<f64>>,
    sds: Option<Vec<f64>>,
}

impl SeriesPanel {
    pub fn new(data: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return invalid(format!("panel must be non-empty, got {}x{}", data.nrows(), data.ncols()));
        }
        if names.len() != data.ncols() {
            return Err(SpvarError::Shape(format!("{} names for {} columns", names.len(), data.ncols())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (t, i) = (pos % data.nrows(), pos / data.nrows());
            return invalid(format!("non-finite value at row {t}, column '{}'", names[i]));
        }
        Ok(Self { data, names, standardized: false, means: None, sds: None })
    }

    /// A panel with default names `y1..yN`.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        Self::new(data, default_names(n))
    }

    pub fn t(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn means(&self) -> Option<&[f64]> {
        self.means.as_deref()
    }

    pub fn sds(&self) -> Option<&[f64]> {
        self.sds.as_deref()
    }

    /// Rows `start..end` as a new panel (standardization metadata kept).
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.t() {
            return invalid(format!("row range {start}..{end} is invalid for T = {}", self.t()));
        }
        Ok(Self {
            data: self.data.rows(start, end - start).into_owned(),
            names: self.names.clone(),
            standardized: self.standardized,
            means: self.means.clone(),
            sds: self.sds.clone(),
        })
    }

    /// Column `i` as a one-dimensional panel.
    pub fn column(&self, i: usize) -> Result<Self> {
        if i >= self.n() {
            return Err(SpvarError::IndexOutOfRange { what: "column", index: i, lo: 0, hi: self.n() - 1 });
        }
        Self::new(self.data.columns(i, 1).into_owned(), vec![self.names[i].clone()])
    }

    /// Subtracts column means and divides by sample standard deviations.
    pub fn standardize(&self) -> Result<Self> {
        let t = self.t();
        if t < 2 {
            return invalid("standardization needs at least two rows");
        }
        let mut data = self.data.clone();
        let mut means = Vec::with_capacity(self.n());
        let mut sds = Vec::with_capacity(self.n());
        for (i, mut col) in data.column_iter_mut().enumerate() {
            let mean = col.iter().sum::<f64>() / t as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
            let sd = var.sqrt();
            if !(sd > 0.0) || sd <= 1e-12 * mean.abs().max(1.0) {
                return invalid(format!("column '{}' has zero variance and cannot be standardized", self.names[i]));
            }
            for v in col.iter_mut() {
                *v = (*v - mean) / sd;
            }
            means.push(mean);
            sds.push(sd);
        }
        Ok(Self { data, names: self.names.clone(), standardized: true, means: Some(means), sds: Some(sds) })
    }

    /// Maps a standardized vector back to original units; identity otherwise.
    pub fn unstandardize_row(&self, row: &[f64]) -> Vec<f64> {
        match (&self.means, &self.sds) {
            (Some(m), Some(s)) => row.iter().zip(m).zip(s).map(|((v, m), s)| v * s + m).collect(),
            _ => row.to_vec(),
        }
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if names.is_empty() || (names.len() == 1 && names[0].is_empty()) {
            return Err(SpvarError::Parse { row: 1, column: 1, message: "missing header row".into() });
        }
        let n = names.len();
        let mut values = Vec::new();
        let mut t = 0usize;
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = idx + 2;
            if rec.len() != n {
                return Err(SpvarError::Parse {
                    row,
                    column: rec.len().min(n) + 1,
                    message: format!("expected {n} fields, found {}", rec.len()),
                });
            }
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| SpvarError::Parse {
                    row,
                    column: j + 1,
                    message: format!("'{cell}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(SpvarError::Parse { row, column: j + 1, message: format!("'{cell}' is not finite") });
                }
                values.push(v);
            }
            t += 1;
        }
        if t == 0 {
            return Err(SpvarError::Parse { row: 2, column: 1, message: "no data rows".into() });
        }
        Self::new(DMatrix::from_row_slice(t, n, &values), names)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write_csv(file)
    }

    /// Writes the header and one row per `t` with 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(&self.names)?;
        for row in self.data.row_iter() {
            w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed 17-significant-digit formatting used by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(3, 2, &[0.1, -2.5, 1.0 / 3.0, 1e-17, 12345.678, -0.0]);
        let p = SeriesPanel::new(m, vec!["a".into(), "b".into()]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = SeriesPanel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.data(), p.data());
        assert_eq!(back.names(), p.names());
    }

    #[test]
    fn standardize_moments() {
        let m = DMatrix::from_fn(50, 3, |t, i| ((t * 7 + i * 3) % 11) as f64 * (i + 1) as f64 + 0.5);
        let p = SeriesPanel::from_matrix(m).unwrap().standardize().unwrap();
        for col in p.data().column_iter() {
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
            assert!(mean.abs() < 1e-12);
            assert!((sd - 1.0).abs() < 1e-12);
        }
        let row: Vec<f64> = p.data().row(4).iter().copied().collect();
        let orig = p.unstandardize_row(&row);
        assert!((orig[1] - (((4 * 7 + 3) % 11) as f64 * 2.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_named() {
        let m = DMatrix::from_fn(5, 2, |t, i| if i == 1 { 3.0 } else { t as f64 });
        let p = SeriesPanel::new(m, vec!["x".into(), "flat".into()]).unwrap();
        let err = p.standardize().unwrap_err();
        assert!(err.to_string().contains("flat"));
    }

    #[test]
    fn parse_errors_locate_cell() {
        let ragged = "a,b\n1,2\n3\n";
        match SeriesPanel::read_csv(ragged.as_bytes()).unwrap_err() {
            SpvarError::Parse { row, .. } => assert_eq!(row, 3),
            e => panic!("{e}"),
        }
        let text = "a,b\n1,2\n3,x\n";
        match SeriesPanel::read_csv(text.as_bytes()).unwrap_err() {
            SpvarError::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            e => panic!("{e}"),
        }
        assert!(matches!(SeriesPanel::read_csv("a,b\n".as_bytes()), Err(SpvarError::Parse { .. })));
        assert!(SeriesPanel::read_csv("".as_bytes()).is_err());
    }
}
