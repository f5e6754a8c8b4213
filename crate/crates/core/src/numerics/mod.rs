//! Dense matrices, GEMM with selectable accumulation precision, and
//! IEEE-754/integer bit primitives.
//!
//! Every reduction in this module runs in ascending index order with a single
//! accumulator, so results are bit-reproducible for fixed operands.

mod float;
mod gemm;
mod matrix;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use float::{
    f16_from_bits, f16_to_bits, flip_bit, flip_value_bit, round_f16, round_to, BitLayout, Scalar,
    F16_MAX,
};
pub use gemm::gemm;
pub use matrix::{reduce_cols, reduce_rows, round_to_dtype, Matrix};

/// Element type tag of a [`Matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F64,
    F32,
    /// binary16 emulated on the binary64 lattice
    F16,
    I8,
    I32,
}

impl DType {
    pub fn is_integer(self) -> bool {
        matches!(self, DType::I8 | DType::I32)
    }

    /// Narrowest precision that holds every value of this dtype exactly.
    pub fn storage_precision(self) -> Precision {
        match self {
            DType::F64 => Precision::F64,
            DType::F32 => Precision::F32,
            DType::F16 => Precision::F16,
            DType::I8 | DType::I32 => Precision::I64Exact,
        }
    }

    /// True when `v` lies on this dtype's lattice. NaN and infinities are
    /// representable in the floating-point types.
    pub fn represents(self, v: f64) -> bool {
        match self {
            DType::F64 => true,
            DType::F32 => v.is_nan() || (v as f32) as f64 == v,
            DType::F16 => v.is_nan() || round_f16(v) == v,
            DType::I8 => v.fract() == 0.0 && (-128.0..=127.0).contains(&v),
            DType::I32 => v.fract() == 0.0 && (i32::MIN as f64..=i32::MAX as f64).contains(&v),
        }
    }

    /// Container tag used by the weight file format.
    pub fn tag(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
            DType::F16 => 2,
            DType::I8 => 3,
            DType::I32 => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => DType::F64,
            1 => DType::F32,
            2 => DType::F16,
            3 => DType::I8,
            4 => DType::I32,
            _ => return None,
        })
    }

    pub fn byte_width(self) -> usize {
        self.bit_layout().width as usize / 8
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F64 => "binary64",
            DType::F32 => "binary32",
            DType::F16 => "binary16",
            DType::I8 => "int8",
            DType::I32 => "int32",
        })
    }
}

/// Accumulation / checksum precision.
///
/// The floating-point variants are totally ordered by width; `I64Exact` is
/// only meaningful for integer operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F16,
    F32,
    F64,
    I64Exact,
}

impl Precision {
    pub fn is_float(self) -> bool {
        !matches!(self, Precision::I64Exact)
    }

    /// Width rank for floating precisions (binary16 < binary32 < binary64).
    pub fn float_rank(self) -> Option<u8> {
        match self {
            Precision::F16 => Some(0),
            Precision::F32 => Some(1),
            Precision::F64 => Some(2),
            Precision::I64Exact => None,
        }
    }

    /// Unit roundoff of the RNE format; zero for exact integer arithmetic.
    pub fn unit_roundoff(self) -> f64 {
        match self {
            Precision::F16 => 2f64.powi(-11),
            Precision::F32 => 2f64.powi(-24),
            Precision::F64 => 2f64.powi(-53),
            Precision::I64Exact => 0.0,
        }
    }

    pub fn max_finite(self) -> f64 {
        match self {
            Precision::F16 => F16_MAX,
            Precision::F32 => f32::MAX as f64,
            Precision::F64 => f64::MAX,
            Precision::I64Exact => i64::MAX as f64,
        }
    }

    /// Whether this precision can accumulate operands of `dtype`.
    pub fn covers(self, dtype: DType) -> bool {
        match (self.float_rank(), dtype.storage_precision().float_rank()) {
            (Some(a), Some(d)) => a >= d,
            (None, None) => true,
            _ => false,
        }
    }

    /// `a + b` rounded once into this precision.
    #[inline]
    pub fn add(self, a: f64, b: f64) -> f64 {
        match self {
            Precision::F64 | Precision::I64Exact => a + b,
            Precision::F32 => (a as f32 + b as f32) as f64,
            Precision::F16 => round_f16(round_f16(a) + round_f16(b)),
        }
    }

    /// `a * b` rounded once into this precision.
    #[inline]
    pub fn mul(self, a: f64, b: f64) -> f64 {
        match self {
            Precision::F64 | Precision::I64Exact => a * b,
            Precision::F32 => (a as f32 * b as f32) as f64,
            Precision::F16 => round_f16(round_f16(a) * round_f16(b)),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F16 => "binary16",
            Precision::F32 => "binary32",
            Precision::F64 => "binary64",
            Precision::I64Exact => "int64-exact",
        })
    }
}
