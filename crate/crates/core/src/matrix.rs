//! Dense row-major matrix used for feature frames, hidden states, and model
//! parameters, plus the binary interchange format.
//!
//! On disk the layout is: a 4-byte magic, `u32` row count, `u32` column
//! count (both little-endian), then `rows * cols` little-endian `f32`
//! values in row-major order. Feature/hidden-state files use magic `EFX1`,
//! codebooks use `ECB1`. In memory everything is `f64`; values are widened
//! on load and narrowed on store.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const FRAME_MAGIC: [u8; 4] = *b"EFX1";
pub const CODEBOOK_MAGIC: [u8; 4] = *b"ECB1";

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidInput("matrix must have at least one column".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() {
            return Err(Error::EmptyInput("cannot build a matrix from zero rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "ragged rows: expected {cols} columns, found {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row vector times matrix: `v` has `rows` entries, result has `cols`.
    pub fn vecmat(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            let row = self.row(i);
            for (o, &r) in out.iter_mut().zip(row) {
                *o += vi * r;
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix, magic: [u8; 4]) -> Result<()> {
    w.write_all(&magic)?;
    w.write_all(&u32::try_from(m.rows()).map_err(|_| too_big(m.rows()))?.to_le_bytes())?;
    w.write_all(&u32::try_from(m.cols()).map_err(|_| too_big(m.cols()))?.to_le_bytes())?;
    for &x in m.data() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<Matrix> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head).map_err(|_| Error::Format("truncated header".into()))?;
    if head != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&head)
        )));
    }
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated row count".into()))?;
    let rows = u32::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated column count".into()))?;
    let cols = u32::from_le_bytes(buf) as usize;
    if cols == 0 {
        return Err(Error::Format("column count must be at least 1".into()));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("row*col count overflows".into()))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(|_| Error::Format("truncated payload".into()))?;
        let x = f32::from_le_bytes(buf);
        if !x.is_finite() {
            return Err(Error::Format("non-finite value in payload".into()));
        }
        data.push(x as f64);
    }
    Matrix::new(rows, cols, data)
}

fn too_big(n: usize) -> Error {
    Error::InvalidInput(format!("dimension {n} exceeds the u32 file format limit"))
}
