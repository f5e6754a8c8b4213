//! Little-endian tensor container:
//!
//! ```text
//! "ALBT" | u32 version | u32 tensor_count
//! per tensor: u16 name_len | name | u8 dtype tag | u8 rank | rank × u32 dims | payload
//! ```
//!
//! Payload elements are row-major in the native encoding of the dtype.

use std::path::Path;

use super::{ModelGraph, QuantParams};
use crate::error::{Error, Result};
use crate::numerics::{DType, Matrix, Scalar};

pub const MAGIC: &[u8; 4] = b"ALBT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

pub fn encode_container(tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(|_| Error::InvalidArgument("too many tensors".into()))?.to_le_bytes());
    for t in tensors {
        let dim_overflow = || Error::DimOverflow { tensor: t.name.clone() };
        if t.numel() != t.data.len() {
            return Err(Error::TensorMismatch {
                tensor: t.name.clone(),
                reason: format!("dims {:?} but {} elements", t.dims, t.data.len()),
            });
        }
        let name_len = u16::try_from(t.name.len()).map_err(|_| Error::InvalidArgument(format!("tensor name too long: {}", t.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dtype.tag());
        out.push(u8::try_from(t.dims.len()).map_err(|_| dim_overflow())?);
        for &d in &t.dims {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| dim_overflow())?.to_le_bytes());
        }
        let width = t.dtype.byte_width();
        for &v in &t.data {
            let bits = Scalar::from_f64(v, t.dtype)?.to_bits();
            out.extend_from_slice(&bits.to_le_bytes()[..width]);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, tensor: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Truncated { tensor: tensor.to_string() })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, tensor: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, tensor)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = "<header>";
    if r.take(4, header).ok() != Some(&MAGIC[..]) {
        return Err(Error::BadMagic);
    }
    let version = r.u32(header)?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let count = r.u32(header)?;
    let mut tensors = Vec::new();
    for i in 0..count {
        let placeholder = format!("#{i}");
        let name_len = u16::from_le_bytes(r.take(2, &placeholder)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(name_len, &placeholder)?.to_vec())
            .map_err(|_| Error::TensorMismatch { tensor: placeholder.clone(), reason: "name is not UTF-8".into() })?;
        let tag = r.take(1, &name)?[0];
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::TensorMismatch { tensor: name.clone(), reason: format!("unknown dtype tag {tag}") })?;
        let rank = r.take(1, &name)?[0] as usize;
        let dims = (0..rank).map(|_| r.u32(&name).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let width = dtype.byte_width();
        let bytes_needed = dims
            .iter()
            .try_fold(width, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| Error::DimOverflow { tensor: name.clone() })?;
        let payload = r.take(bytes_needed, &name)?;
        let data = payload
            .chunks_exact(width)
            .map(|c| {
                let mut b = [0u8; 8];
                b[..width].copy_from_slice(c);
                Scalar::from_bits(dtype, u64::from_le_bytes(b)).to_f64()
            })
            .collect();
        tensors.push(Tensor { name, dtype, dims, data });
    }
    Ok(tensors)
}

fn model_tensors(model: &ModelGraph) -> Vec<Tensor> {
    let mut out = Vec::new();
    for layer in &model.layers {
        let i = layer.index;
        out.push(Tensor {
            name: format!("layer.{i}.weight"),
            dtype: layer.weight.dtype(),
            dims: vec![layer.in_dim, layer.out_dim],
            data: layer.weight.data().to_vec(),
        });
        out.push(Tensor {
            name: format!("layer.{i}.bias"),
            dtype: layer.output_dtype(),
            dims: vec![layer.out_dim],
            data: layer.bias.clone(),
        });
        if let Some(q) = layer.quant {
            out.push(Tensor {
                name: format!("layer.{i}.quant"),
                dtype: DType::F64,
                dims: vec![2],
                data: vec![q.input_scale, q.weight_scale],
            });
        }
    }
    out
}

pub fn save_weights(path: &Path, model: &ModelGraph) -> Result<()> {
    std::fs::write(path, encode_container(&model_tensors(model))?)?;
    Ok(())
}

/// Loads weights into a copy of `template`, which supplies the graph shape.
pub fn load_weights(path: &Path, template: &ModelGraph) -> Result<ModelGraph> {
    let tensors = decode_container(&std::fs::read(path)?)?;
    let find = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    };
    let mut model = template.clone();
    for layer in &mut model.layers {
        let i = layer.index;
        let expect = |t: &Tensor, dtype: DType, dims: &[usize]| -> Result<()> {
            if t.dtype != dtype || t.dims != dims {
                return Err(Error::TensorMismatch {
                    tensor: t.name.clone(),
                    reason: format!("found {} {:?}, expected {dtype} {dims:?}", t.dtype, t.dims),
                });
            }
            Ok(())
        };
        let w = find(&format!("layer.{i}.weight"))?;
        expect(w, layer.weight.dtype(), &[layer.in_dim, layer.out_dim])?;
        layer.weight = Matrix::new(layer.in_dim, layer.out_dim, w.dtype, w.data.clone())?;
        let b = find(&format!("layer.{i}.bias"))?;
        expect(b, layer.output_dtype(), &[layer.out_dim])?;
        layer.bias = b.data.clone();
        if layer.quant.is_some() {
            let q = find(&format!("layer.{i}.quant"))?;
            expect(q, DType::F64, &[2])?;
            layer.quant = Some(QuantParams { input_scale: q.data[0], weight_scale: q.data[1] });
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_toy_model, ToyConfig};

    #[test]
    fn round_trip_all_dtypes() {
        for dtype in [DType::F64, DType::F32, DType::F16, DType::I8] {
            let m = ToyConfig::new(1, 8, 2, 3, 5).with_dtype(dtype).build().unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("w.albt");
            save_weights(&path, &m).unwrap();
            let loaded = load_weights(&path, &m).unwrap();
            for (a, b) in m.layers.iter().zip(&loaded.layers) {
                assert!(a.weight.bit_eq(&b.weight));
                assert!(a.bias.iter().zip(&b.bias).all(|(x, y)| x.to_bits() == y.to_bits()));
                assert_eq!(a.quant, b.quant);
            }
            let bytes = std::fs::read(&path).unwrap();
            save_weights(&path, &loaded).unwrap();
            assert_eq!(bytes, std::fs::read(&path).unwrap());
        }
    }

    #[test]
    fn bad_magic() {
        let m = build_toy_model(1, 4, 1, 2, 0).unwrap();
        let mut bytes = encode_container(&model_tensors(&m)).unwrap();
        bytes[0] = b'X';
        let err = decode_container(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "bad magic");
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_container(&[]).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_container(&bytes), Err(Error::VersionMismatch { found: 2, .. })));
    }

    #[test]
    fn truncation_names_tensor() {
        let m = build_toy_model(1, 4, 1, 2, 0).unwrap();
        let bytes = encode_container(&model_tensors(&m)).unwrap();
        // cut inside the first weight payload
        let cut = 4 + 4 + 4 + 2 + "layer.0.weight".len() + 2 + 8 + 10;
        match decode_container(&bytes[..cut]) {
            Err(Error::Truncated { tensor }) => assert_eq!(tensor, "layer.0.weight"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dim_overflow() {
        let t = Tensor { name: "big".into(), dtype: DType::F64, dims: vec![], data: vec![1.0] };
        let mut bytes = encode_container(&[t]).unwrap();
        // rewrite rank 0 -> 3 and append huge dims
        let rank_pos = 12 + 2 + 3 + 1;
        bytes.truncate(rank_pos);
        bytes.push(3);
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_container(&bytes), Err(Error::DimOverflow { .. })));
    }
}
