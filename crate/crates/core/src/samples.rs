//! Row-major sample matrices and their on-disk formats.
//!
//! CSV: one row per draw, header row of dimension names.
//! Packed binary: `rows: u64`, `cols: u64`, then `rows * cols` f64 values,
//! all little-endian, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SampleMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(SampleMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(SampleMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact would yield nothing for zero-width rows
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> SampleMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        SampleMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// New matrix holding the given columns, in the given order.
    pub fn select_cols(&self, indices: &[usize]) -> SampleMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.rows);
        for r in self.iter_rows() {
            data.extend(indices.iter().map(|&c| r[c]));
        }
        SampleMatrix {
            rows: self.rows,
            cols: indices.len(),
            data,
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Unbiased sample covariance, row-major `cols x cols`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.cols;
        let mean = self.column_means();
        let mut cov = vec![0.0; d * d];
        for r in self.iter_rows() {
            for a in 0..d {
                let da = r[a] - mean[a];
                for b in 0..d {
                    cov[a * d + b] += da * (r[b] - mean[b]);
                }
            }
        }
        let denom = (self.rows.max(2) - 1) as f64;
        cov.iter_mut().for_each(|c| *c /= denom);
        cov
    }

    pub fn write_csv(&self, path: &Path, header: &[String]) -> Result<()> {
        if header.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: header.len(),
            });
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        let mut line = String::new();
        for r in self.iter_rows() {
            line.clear();
            for (c, v) in r.iter().enumerate() {
                if c > 0 {
                    line.push(',');
                }
                // Display for f64 is the shortest round-tripping representation.
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Reads a CSV with a header row; returns the matrix and the header.
    pub fn read_csv(path: &Path) -> Result<(SampleMatrix, Vec<String>)> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let cols = header.len();
        let mut data = Vec::new();
        let mut rows = 0;
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::format(path, e.to_string()))?;
            if record.len() != cols {
                return Err(Error::format(
                    path,
                    format!(
                        "row {} has {} fields, header has {cols}",
                        line + 1,
                        record.len()
                    ),
                ));
            }
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::format(path, format!("row {}: bad number `{field}`", line + 1))
                })?;
                data.push(v);
            }
            rows += 1;
        }
        Ok((SampleMatrix { rows, cols, data }, header))
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        out.write_all(&(self.rows as u64).to_le_bytes())
            .map_err(io)?;
        out.write_all(&(self.cols as u64).to_le_bytes())
            .map_err(io)?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_binary(path: &Path) -> Result<SampleMatrix> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = BufReader::new(file);
        let mut word = [0u8; 8];
        let mut next = |input: &mut BufReader<File>| -> Result<[u8; 8]> {
            input
                .read_exact(&mut word)
                .map_err(|_| Error::format(path, "truncated packed sample file"))?;
            Ok(word)
        };
        let rows = u64::from_le_bytes(next(&mut input)?) as usize;
        let cols = u64::from_le_bytes(next(&mut input)?) as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(path, "row/column counts overflow"))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(next(&mut input)?));
        }
        let mut rest = Vec::new();
        input
            .read_to_end(&mut rest)
            .map_err(|e| Error::io(path, e))?;
        if !rest.is_empty() {
            return Err(Error::format(path, "trailing bytes after packed samples"));
        }
        Ok(SampleMatrix { rows, cols, data })
    }

    /// Reads either format, chosen by extension (`.bin` is packed, anything else CSV).
    pub fn read_any(path: &Path) -> Result<SampleMatrix> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::read_binary(path),
            _ => Self::read_csv(path).map(|(m, _)| m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn select_and_moments() {
        let m = SampleMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(m.column_means(), vec![2.0, 4.0]);
        assert_eq!(m.covariance(), vec![2.0, 4.0, 4.0, 8.0]);
        assert_eq!(m.select_cols(&[1]).as_slice(), &[2.0, 6.0]);
        assert_eq!(m.select_rows(&[1, 0]).row(0), &[3.0, 6.0]);
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        std::fs::write(&path, [2u8, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert!(matches!(
            SampleMatrix::read_binary(&path),
            Err(Error::Format { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn csv_and_binary_round_trip(
            rows in 1usize..6,
            cols in 1usize..4,
            seed in proptest::collection::vec(-1e6f64..1e6, 24),
        ) {
            let data: Vec<f64> = seed.iter().cycle().take(rows * cols).map(|v| v / 7.0).collect();
            let m = SampleMatrix::from_vec(rows, cols, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let header: Vec<String> = (0..cols).map(|c| format!("x{c}")).collect();
            let csv_path = dir.path().join("s.csv");
            m.write_csv(&csv_path, &header).unwrap();
            let (back, h) = SampleMatrix::read_csv(&csv_path).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(h, header);
            let bin_path = dir.path().join("s.bin");
            m.write_binary(&bin_path).unwrap();
            prop_assert_eq!(SampleMatrix::read_binary(&bin_path).unwrap(), m);
        }
    }
}
