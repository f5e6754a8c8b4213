//! IEEE-754 helpers: binary16 emulation, round-to-precision and single-bit
//! flips on storage encodings.

use std::ops::Range;

use super::{DType, Precision};
use crate::error::{Error, Result};

/// Largest finite binary16 value.
pub const F16_MAX: f64 = 65504.0;
const F16_MIN_NORMAL: f64 = 6.103_515_625e-5; // 2^-14
const F16_SUBNORMAL_ULP: f64 = 5.960_464_477_539_063e-8; // 2^-24

/// Rounds a binary64 value onto the binary16 lattice (round-to-nearest-even).
/// Overflow goes to a signed infinity.
pub fn round_f16(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let a = x.abs();
    let r = if a < F16_MIN_NORMAL {
        (a / F16_SUBNORMAL_ULP).round_ties_even() * F16_SUBNORMAL_ULP
    } else {
        // unbiased exponent of a normal binary64 value
        let e = ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023;
        let quantum = pow2(e - 10);
        (a / quantum).round_ties_even() * quantum
    };
    let r = if r > F16_MAX { f64::INFINITY } else { r };
    r.copysign(x)
}

/// Rounds `x` into precision `p` with RNE and widens back to binary64.
/// `I64Exact` rounds to the nearest integer (ties to even).
pub fn round_to(x: f64, p: Precision) -> f64 {
    match p {
        Precision::F64 => x,
        Precision::F32 => x as f32 as f64,
        Precision::F16 => round_f16(x),
        Precision::I64Exact => x.round_ties_even(),
    }
}

fn pow2(e: i32) -> f64 {
    // exact for the binary16-relevant exponent range
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// Encodes a value that already lies on the binary16 lattice.
pub fn f16_to_bits(x: f64) -> u16 {
    let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
    if x.is_nan() {
        return 0x7e00 | sign;
    }
    let a = x.abs();
    if a.is_infinite() {
        return sign | 0x7c00;
    }
    if a == 0.0 {
        return sign;
    }
    if a < F16_MIN_NORMAL {
        return sign | (a / F16_SUBNORMAL_ULP) as u16;
    }
    let e = ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    let mant = ((a / pow2(e) - 1.0) * 1024.0) as u16;
    sign | (((e + 15) as u16) << 10) | mant
}

pub fn f16_from_bits(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let mant = (bits & 0x3ff) as f64;
    let mag = match exp {
        0 => mant * F16_SUBNORMAL_ULP,
        31 if mant == 0.0 => f64::INFINITY,
        31 => f64::NAN,
        _ => (1.0 + mant / 1024.0) * pow2(exp - 15),
    };
    sign * mag
}

/// Field layout of a storage encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitLayout {
    pub width: u32,
    pub mantissa: Range<u32>,
    pub exponent: Range<u32>,
    /// Sign bit for floats, most significant bit for two's complement.
    pub sign: u32,
}

impl DType {
    pub fn bit_layout(self) -> BitLayout {
        match self {
            DType::F64 => BitLayout { width: 64, mantissa: 0..52, exponent: 52..63, sign: 63 },
            DType::F32 => BitLayout { width: 32, mantissa: 0..23, exponent: 23..31, sign: 31 },
            DType::F16 => BitLayout { width: 16, mantissa: 0..10, exponent: 10..15, sign: 15 },
            DType::I8 => BitLayout { width: 8, mantissa: 0..7, exponent: 0..0, sign: 7 },
            DType::I32 => BitLayout { width: 32, mantissa: 0..31, exponent: 0..0, sign: 31 },
        }
    }
}

/// A scalar carried in its native storage encoding, so bit flips are
/// encoding-exact (NaN payloads included).
#[derive(Debug, Clone, Copy)]
pub enum Scalar {
    F64(f64),
    F32(f32),
    /// binary16 storage bits
    F16(u16),
    I8(i8),
    I32(i32),
}

impl Scalar {
    pub fn from_f64(value: f64, dtype: DType) -> Result<Self> {
        if !dtype.represents(value) {
            return Err(Error::NotRepresentable { value, dtype });
        }
        Ok(match dtype {
            DType::F64 => Scalar::F64(value),
            DType::F32 => Scalar::F32(value as f32),
            DType::F16 => Scalar::F16(f16_to_bits(value)),
            DType::I8 => Scalar::I8(value as i8),
            DType::I32 => Scalar::I32(value as i32),
        })
    }

    pub fn dtype(self) -> DType {
        match self {
            Scalar::F64(_) => DType::F64,
            Scalar::F32(_) => DType::F32,
            Scalar::F16(_) => DType::F16,
            Scalar::I8(_) => DType::I8,
            Scalar::I32(_) => DType::I32,
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Scalar::F64(v) => v,
            Scalar::F32(v) => v as f64,
            Scalar::F16(b) => f16_from_bits(b),
            Scalar::I8(v) => v as f64,
            Scalar::I32(v) => v as f64,
        }
    }

    /// Raw storage bits, zero-extended.
    pub fn to_bits(self) -> u64 {
        match self {
            Scalar::F64(v) => v.to_bits(),
            Scalar::F32(v) => v.to_bits() as u64,
            Scalar::F16(b) => b as u64,
            Scalar::I8(v) => v as u8 as u64,
            Scalar::I32(v) => v as u32 as u64,
        }
    }

    /// Rebuilds a scalar from the low `byte_width` bytes of `bits`.
    pub fn from_bits(dtype: DType, bits: u64) -> Self {
        match dtype {
            DType::F64 => Scalar::F64(f64::from_bits(bits)),
            DType::F32 => Scalar::F32(f32::from_bits(bits as u32)),
            DType::F16 => Scalar::F16(bits as u16),
            DType::I8 => Scalar::I8(bits as u8 as i8),
            DType::I32 => Scalar::I32(bits as u32 as i32),
        }
    }
}

/// Flips bit `bit_index` of the scalar's storage encoding.
pub fn flip_bit(value: Scalar, bit_index: u32) -> Result<Scalar> {
    let dtype = value.dtype();
    let width = dtype.bit_layout().width;
    if bit_index >= width {
        return Err(Error::BitOutOfRange { bit: bit_index, dtype, width });
    }
    Ok(Scalar::from_bits(dtype, value.to_bits() ^ (1u64 << bit_index)))
}

/// Flips a bit of an element stored as binary64 on `dtype`'s lattice.
pub fn flip_value_bit(value: f64, bit_index: u32, dtype: DType) -> Result<f64> {
    Ok(flip_bit(Scalar::from_f64(value, dtype)?, bit_index)?.to_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_bit_of_one() {
        let v = flip_bit(Scalar::F32(1.0), 31).unwrap();
        assert_eq!(v.to_f64(), -1.0);
    }

    #[test]
    fn int8_lsb() {
        assert_eq!(flip_bit(Scalar::I8(4), 0).unwrap().to_f64(), 5.0);
        assert_eq!(flip_bit(Scalar::I8(0), 7).unwrap().to_f64(), -128.0);
    }

    #[test]
    fn exponent_msb_of_one_is_infinity() {
        // 0x3F800000 ^ (1 << 30) == 0x7F800000
        let v = flip_bit(Scalar::F32(1.0), 30).unwrap();
        assert_eq!(v.to_bits(), 0x7f80_0000);
        assert_eq!(v.to_f64(), f64::INFINITY);
    }

    #[test]
    fn bit_out_of_range() {
        assert!(matches!(flip_bit(Scalar::F16(0), 16), Err(Error::BitOutOfRange { width: 16, .. })));
        assert!(flip_bit(Scalar::I8(1), 8).is_err());
        assert!(flip_bit(Scalar::F64(1.0), 63).is_ok());
    }

    #[test]
    fn f16_rounding_edges() {
        assert_eq!(round_to(1.0, Precision::F16), 1.0);
        assert_eq!(round_to(65520.0, Precision::F16), f64::INFINITY);
        assert_eq!(round_to(-65520.0, Precision::F16), f64::NEG_INFINITY);
        assert_eq!(round_to(65519.0, Precision::F16), 65504.0);
        // 2^-25 is exactly half the smallest subnormal: ties to even -> 0
        assert_eq!(round_to(2f64.powi(-25), Precision::F16), 0.0);
        assert_eq!(round_to(2f64.powi(-25) * 1.5, Precision::F16), 2f64.powi(-24));
        assert!(round_to(f64::NAN, Precision::F16).is_nan());
    }

    #[test]
    fn f16_encoding_known_values() {
        assert_eq!(f16_to_bits(1.0), 0x3c00);
        assert_eq!(f16_to_bits(-2.0), 0xc000);
        assert_eq!(f16_to_bits(65504.0), 0x7bff);
        assert_eq!(f16_to_bits(2f64.powi(-24)), 0x0001);
        assert_eq!(f16_from_bits(0x3555), 0.333_251_953_125);
        assert!(f16_from_bits(0x7c01).is_nan());
    }

    #[test]
    fn f16_sign_flip_of_zero_is_negative_zero() {
        let v = flip_value_bit(0.0, 15, DType::F16).unwrap();
        assert_eq!(v, 0.0);
        assert!(v.is_sign_negative());
    }
}
