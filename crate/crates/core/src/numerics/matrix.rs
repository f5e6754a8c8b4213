use super::DType;
use crate::error::{Error, Result};

/// Dense row-major matrix. Elements live as binary64 values constrained to
/// the lattice of `dtype`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    dtype: DType,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, dtype: DType, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        if let Some(&value) = data.iter().find(|v| !dtype.represents(**v)) {
            return Err(Error::NotRepresentable { value, dtype });
        }
        Ok(Self { rows, cols, dtype, data })
    }

    /// Builds a matrix by rounding every element onto the dtype lattice.
    /// Integer dtypes round to nearest and saturate.
    pub fn from_f64_rounded(rows: usize, cols: usize, dtype: DType, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = round_to_dtype(*v, dtype);
        }
        Self::new(rows, cols, dtype, data)
    }

    pub fn from_rows(rows: &[&[f64]], dtype: DType) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, dtype, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize, dtype: DType) -> Self {
        Self { rows, cols, dtype, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize, dtype: DType) -> Self {
        let mut m = Self::zeros(n, n, dtype);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, dtype: DType, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, dtype, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Sets a flat element; the value must be representable in the dtype.
    pub fn set_flat(&mut self, index: usize, value: f64) -> Result<()> {
        if index >= self.data.len() {
            return Err(Error::IndexOutOfRange(format!(
                "element {index} of a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        if !self.dtype.represents(value) {
            return Err(Error::NotRepresentable { value, dtype: self.dtype });
        }
        self.data[index] = value;
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            data.extend((0..self.rows).map(|r| self.get(r, c)));
        }
        Self::from_parts_unchecked(self.cols, self.rows, self.dtype, data)
    }

    /// First `n` rows as a new matrix.
    pub fn head_rows(&self, n: usize) -> Self {
        let n = n.min(self.rows);
        Self::from_parts_unchecked(n, self.cols, self.dtype, self.data[..n * self.cols].to_vec())
    }

    /// Encoding-exact equality: same shape, dtype and bit patterns.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.dtype == other.dtype
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// (min, max) over all elements, ignoring nothing: NaN propagates as NaN.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| {
            if v.is_nan() || lo.is_nan() {
                (f64::NAN, f64::NAN)
            } else {
                (lo.min(v), hi.max(v))
            }
        }))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Rounds onto the lattice of `dtype` (RNE for floats, round-and-saturate for
/// integers, which never produce a negative zero).
pub fn round_to_dtype(v: f64, dtype: DType) -> f64 {
    match dtype {
        DType::F64 => v,
        DType::F32 => v as f32 as f64,
        DType::F16 => super::round_f16(v),
        DType::I8 => v.round_ties_even().clamp(-128.0, 127.0) + 0.0,
        DType::I32 => v.round_ties_even().clamp(i32::MIN as f64, i32::MAX as f64) + 0.0,
    }
}

/// Row sums `s[b] = Σ_j M[b,j]`, accumulated in binary64 (exactly, in i64,
/// for integer dtypes).
pub fn reduce_rows(m: &Matrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    Ok((0..m.rows).map(|r| sum_slice(m.row(r), m.dtype)).collect())
}

/// Column sums `s[j] = Σ_b M[b,j]`.
pub fn reduce_cols(m: &Matrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if m.dtype.is_integer() {
        let mut acc = vec![0i64; m.cols];
        for r in 0..m.rows {
            for (a, v) in acc.iter_mut().zip(m.row(r)) {
                *a += *v as i64;
            }
        }
        Ok(acc.into_iter().map(|a| a as f64).collect())
    } else {
        let mut acc = vec![0.0f64; m.cols];
        for r in 0..m.rows {
            for (a, v) in acc.iter_mut().zip(m.row(r)) {
                *a += *v;
            }
        }
        Ok(acc)
    }
}

fn sum_slice(xs: &[f64], dtype: DType) -> f64 {
    if dtype.is_integer() {
        xs.iter().map(|v| *v as i64).sum::<i64>() as f64
    } else {
        xs.iter().fold(0.0, |a, v| a + v)
    }
}
