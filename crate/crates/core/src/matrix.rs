//! Dense row-major binary64 matrices.
//!
//! Binary container: `rows: u64 LE`, `cols: u64 LE`, then `rows * cols`
//! binary64 values, little-endian, row-major. The CSV form writes one matrix
//! row per line using the shortest representation that round-trips.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("matrix dims must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                row: pos / cols,
                col: pos % cols,
                detail: format!("matrix entry is {}", data[pos]),
            });
        }
        Ok(RealMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    /// Skips the finiteness scan. Callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        RealMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::Numeric {
                row: i,
                col: j,
                detail: format!("refusing to store {v}"),
            });
        }
        self.data[i * self.cols + j] = v;
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> RealMatrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        RealMatrix::from_parts_unchecked(self.cols, self.rows, out)
    }

    /// Rounds every entry to the nearest binary32 value.
    ///
    /// Fails if an entry overflows binary32.
    pub fn quantize_f32(&self) -> Result<RealMatrix> {
        let data: Vec<f64> = self.data.iter().map(|&v| v as f32 as f64).collect();
        RealMatrix::new(self.rows, self.cols, data)
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn is_f32_exact(&self) -> bool {
        self.data.iter().all(|&v| v as f32 as f64 == v)
    }

    pub fn same_shape(&self, other: &RealMatrix) -> bool {
        self.shape() == other.shape()
    }

    pub fn frobenius_norm(&self) -> f64 {
        crate::gemm::sum_of_squares(&self.data).sqrt()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.data.len());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<RealMatrix> {
        if bytes.len() < 16 {
            return Err(Error::Format("matrix container shorter than its header".into()));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let (rows, cols) = (word(0) as usize, word(8) as usize);
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(16))
            .ok_or_else(|| Error::Format(format!("absurd matrix header {rows}x{cols}")))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{rows}x{cols} container should be {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let data = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        RealMatrix::new(rows, cols, data)
    }

    pub fn write_bin(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_bin(path: impl AsRef<Path>) -> Result<RealMatrix> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<RealMatrix> {
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|e| {
                        Error::Format(format!("line {}: bad number {t:?}: {e}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            match cols {
                None => cols = Some(values.len()),
                Some(c) if c != values.len() => {
                    return Err(Error::Format(format!(
                        "line {} has {} columns, expected {c}",
                        lineno + 1,
                        values.len()
                    )))
                }
                _ => {}
            }
            data.extend(values);
            rows += 1;
        }
        RealMatrix::new(rows, cols.unwrap_or(0), data)
    }
}
