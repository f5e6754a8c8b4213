use super::matrix::round_to_dtype;
use super::{DType, Matrix, Precision};
use crate::error::{Error, Result};

/// `Y = X · Wᵀ + bias` with `Wt` stored as `[in × out]`.
///
/// Each output element is accumulated in `accum` over ascending `k` with a
/// single accumulator, the bias is added last, and the result is rounded to
/// the operand dtype. Integer operands accumulate in int32 with overflow
/// checking and produce an int32 matrix; they require `Precision::I64Exact`.
pub fn gemm(x: &Matrix, wt: &Matrix, bias: Option<&[f64]>, accum: Precision) -> Result<Matrix> {
    if x.cols() != wt.rows() {
        return Err(Error::DimensionMismatch(format!(
            "X is {}x{} but Wt is {}x{}",
            x.rows(),
            x.cols(),
            wt.rows(),
            wt.cols()
        )));
    }
    if let Some(b) = bias {
        if b.len() != wt.cols() {
            return Err(Error::DimensionMismatch(format!(
                "bias has {} entries, output has {} columns",
                b.len(),
                wt.cols()
            )));
        }
    }
    if x.dtype().is_integer() != wt.dtype().is_integer() || (!x.dtype().is_integer() && x.dtype() != wt.dtype()) {
        return Err(Error::InvalidArgument(format!(
            "operand dtypes differ: {} vs {}",
            x.dtype(),
            wt.dtype()
        )));
    }
    if !accum.covers(x.dtype()) {
        return Err(Error::AccumTooNarrow { accum, dtype: x.dtype() });
    }
    if x.dtype().is_integer() {
        return gemm_int(x, wt, bias);
    }
    let data = match accum {
        Precision::F64 => gemm_f64(x, wt, bias),
        Precision::F32 => gemm_f32(x, wt, bias),
        Precision::F16 => gemm_emulated(x, wt, bias, accum),
        Precision::I64Exact => unreachable!("covers() rejects I64Exact for float operands"),
    };
    let dtype = x.dtype();
    let data = data.into_iter().map(|v| round_to_dtype(v, dtype)).collect();
    Ok(Matrix::from_parts_unchecked(x.rows(), wt.cols(), dtype, data))
}

fn gemm_f64(x: &Matrix, wt: &Matrix, bias: Option<&[f64]>) -> Vec<f64> {
    let (n_out, w) = (wt.cols(), wt.data());
    let mut out = Vec::with_capacity(x.rows() * n_out);
    let mut acc = vec![0.0f64; n_out];
    for b in 0..x.rows() {
        acc.fill(0.0);
        for (k, &xv) in x.row(b).iter().enumerate() {
            let w_row = &w[k * n_out..(k + 1) * n_out];
            for (a, &wv) in acc.iter_mut().zip(w_row) {
                *a += xv * wv;
            }
        }
        if let Some(bias) = bias {
            for (a, bv) in acc.iter_mut().zip(bias) {
                *a += bv;
            }
        }
        out.extend_from_slice(&acc);
    }
    out
}

fn gemm_f32(x: &Matrix, wt: &Matrix, bias: Option<&[f64]>) -> Vec<f64> {
    let n_out = wt.cols();
    let w: Vec<f32> = wt.data().iter().map(|v| *v as f32).collect();
    let bias: Option<Vec<f32>> = bias.map(|b| b.iter().map(|v| *v as f32).collect());
    let mut out = Vec::with_capacity(x.rows() * n_out);
    let mut acc = vec![0.0f32; n_out];
    for b in 0..x.rows() {
        acc.fill(0.0);
        for (k, &xv) in x.row(b).iter().enumerate() {
            let xv = xv as f32;
            let w_row = &w[k * n_out..(k + 1) * n_out];
            for (a, &wv) in acc.iter_mut().zip(w_row) {
                *a += xv * wv;
            }
        }
        if let Some(bias) = &bias {
            for (a, bv) in acc.iter_mut().zip(bias) {
                *a += bv;
            }
        }
        out.extend(acc.iter().map(|v| *v as f64));
    }
    out
}

fn gemm_emulated(x: &Matrix, wt: &Matrix, bias: Option<&[f64]>, p: Precision) -> Vec<f64> {
    let n_out = wt.cols();
    let mut out = Vec::with_capacity(x.rows() * n_out);
    for b in 0..x.rows() {
        let xr = x.row(b);
        for o in 0..n_out {
            let mut acc = 0.0;
            for (k, &xv) in xr.iter().enumerate() {
                acc = p.add(acc, p.mul(xv, wt.get(k, o)));
            }
            if let Some(bias) = bias {
                acc = p.add(acc, bias[o]);
            }
            out.push(acc);
        }
    }
    out
}

fn gemm_int(x: &Matrix, wt: &Matrix, bias: Option<&[f64]>) -> Result<Matrix> {
    let n_out = wt.cols();
    let w: Vec<i32> = wt.data().iter().map(|v| *v as i32).collect();
    let bias: Option<Vec<i32>> = match bias {
        Some(b) => {
            if let Some(&value) = b.iter().find(|v| !DType::I32.represents(**v)) {
                return Err(Error::NotRepresentable { value, dtype: DType::I32 });
            }
            Some(b.iter().map(|v| *v as i32).collect())
        }
        None => None,
    };
    let overflow = |b: usize, o: usize| Error::IntegerOverflow(format!("int32 accumulator at output ({b}, {o})"));
    let mut out = Vec::with_capacity(x.rows() * n_out);
    let mut acc = vec![0i32; n_out];
    for b in 0..x.rows() {
        acc.fill(0);
        for (k, &xv) in x.row(b).iter().enumerate() {
            let xv = xv as i32;
            let w_row = &w[k * n_out..(k + 1) * n_out];
            for (o, (a, &wv)) in acc.iter_mut().zip(w_row).enumerate() {
                *a = xv
                    .checked_mul(wv)
                    .and_then(|p| a.checked_add(p))
                    .ok_or_else(|| overflow(b, o))?;
            }
        }
        if let Some(bias) = &bias {
            for (o, (a, bv)) in acc.iter_mut().zip(bias).enumerate() {
                *a = a.checked_add(*bv).ok_or_else(|| overflow(b, o))?;
            }
        }
        out.extend(acc.iter().map(|v| *v as f64));
    }
    Ok(Matrix::from_parts_unchecked(x.rows(), n_out, DType::I32, out))
}
