//! The `DRBM` checkpoint container.
//!
//! Layout, integers and floats little-endian:
//!
//! ```text
//! "DRBM"  u32 version = 1  u32 layer count
//! per layer:
//!   u8 kind (0 dense, 1 conv)
//!   dense: u32 visible, u32 hidden
//!   conv:  u32 in_channels, out_channels, kernel, stride, input_height, input_width
//!   visible spec, hidden spec: u32 N, f64 k, u8 unit kind
//!   f64 visible bias, f64 hidden bias, f64 weights (or filters), row-major
//! u32 CRC32 of every preceding byte
//! ```

use std::path::Path;

use ndarray::{Array1, Array2, Array4};

use crate::activation::{ActivationSpec, UnitKind};
use crate::conv::ConvRbmParams;
use crate::error::{DataError, Error, Result};
use crate::params::RbmParams;
use crate::stack::{DbnModel, Layer};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DRBM";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_DENSE: u8 = 0;
const KIND_CONV: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::OutOfRange(format!("dimension {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_spec(out: &mut Vec<u8>, spec: &ActivationSpec) {
    out.extend_from_slice(&spec.n_levels().to_le_bytes());
    out.extend_from_slice(&spec.scale().to_le_bytes());
    out.push(spec.unit().code());
}

fn put_f64s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a validated model.
pub fn encode_model(model: &DbnModel) -> Result<Vec<u8>> {
    model.validate().map_err(Error::Invalid)?;
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, model.layers().len())?;
    for layer in model.layers() {
        match layer {
            Layer::Dense(p) => {
                out.push(KIND_DENSE);
                put_u32(&mut out, p.n_visible())?;
                put_u32(&mut out, p.n_hidden())?;
                put_spec(&mut out, &p.visible_spec);
                put_spec(&mut out, &p.hidden_spec);
                put_f64s(&mut out, &p.visible_bias);
                put_f64s(&mut out, &p.hidden_bias);
                put_f64s(&mut out, &p.weights);
            }
            Layer::Conv(p) => {
                out.push(KIND_CONV);
                for d in [p.in_channels(), p.out_channels(), p.kernel(), p.stride, p.input_height, p.input_width] {
                    put_u32(&mut out, d)?;
                }
                put_spec(&mut out, &p.visible_spec);
                put_spec(&mut out, &p.hidden_spec);
                put_f64s(&mut out, &p.visible_bias);
                put_f64s(&mut out, &p.hidden_bias);
                put_f64s(&mut out, &p.filters);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            DataError::MalformedCheckpoint(format!("payload ends at byte {}, needed {n} more", self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dim(&mut self) -> Result<usize, DataError> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn spec(&mut self) -> Result<ActivationSpec> {
        let n = self.u32()?;
        let k = self.f64()?;
        let code = self.u8()?;
        let unit = UnitKind::from_code(code).ok_or_else(|| DataError::MalformedCheckpoint(format!("unknown unit kind {code}")))?;
        ActivationSpec::new(n, k, unit).map_err(|e| DataError::MalformedCheckpoint(e.to_string()).into())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DataError> {
        let bytes = n.checked_mul(8).ok_or_else(|| DataError::MalformedCheckpoint("tensor size overflows".into()))?;
        Ok(self.take(bytes)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn product(dims: &[usize]) -> Result<usize, DataError> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| DataError::MalformedCheckpoint(format!("dimensions {dims:?} overflow")))
}

/// Parses and validates a checkpoint. Magic, version and CRC are checked in
/// that order, each with its own error.
pub fn decode_model(bytes: &[u8]) -> Result<DbnModel> {
    let head: [u8; 4] = bytes.get(..4).and_then(|b| b.try_into().ok()).ok_or(DataError::Truncated { needed: 4, found: bytes.len() })?;
    if head != CHECKPOINT_MAGIC {
        return Err(DataError::BadCheckpointMagic(head).into());
    }
    if bytes.len() < 16 {
        return Err(DataError::Truncated { needed: 16, found: bytes.len() }.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(DataError::UnsupportedVersion(version).into());
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(DataError::Crc { stored, computed }.into());
    }

    let mut r = Reader { bytes: payload, pos: 8 };
    let count = r.dim()?;
    let mut layers = Vec::new();
    for i in 0..count {
        let layer = match r.u8()? {
            KIND_DENSE => {
                let (v, h) = (r.dim()?, r.dim()?);
                let (vs, hs) = (r.spec()?, r.spec()?);
                let a = Array1::from(r.f64s(v)?);
                let b = Array1::from(r.f64s(h)?);
                let w = Array2::from_shape_vec((v, h), r.f64s(product(&[v, h])?)?).expect("length read");
                Layer::Dense(RbmParams::new(a, b, w, vs, hs).map_err(|e| e.in_layer(i))?)
            }
            KIND_CONV => {
                let d: Vec<usize> = (0..6).map(|_| r.dim()).collect::<Result<_, _>>()?;
                let [c_in, c_out, k, stride, height, width] = d[..] else { unreachable!() };
                let (vs, hs) = (r.spec()?, r.spec()?);
                let a = Array1::from(r.f64s(c_in)?);
                let b = Array1::from(r.f64s(c_out)?);
                let w = r.f64s(product(&[c_out, c_in, k, k])?)?;
                Layer::Conv(ConvRbmParams {
                    filters: Array4::from_shape_vec((c_out, c_in, k, k), w).expect("length read"),
                    hidden_bias: b,
                    visible_bias: a,
                    stride,
                    input_height: height,
                    input_width: width,
                    visible_spec: vs,
                    hidden_spec: hs,
                })
            }
            kind => return Err(DataError::MalformedCheckpoint(format!("layer {i} has unknown kind {kind}")).into()),
        };
        layers.push(layer);
    }
    if r.pos != payload.len() {
        return Err(DataError::MalformedCheckpoint(format!("{} trailing bytes", payload.len() - r.pos)).into());
    }
    DbnModel::new(layers)
}

pub fn save_model(model: &DbnModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e).into())
}

pub fn load_model(path: &Path) -> Result<DbnModel> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::ImageShape;
    use crate::stack::Architecture;

    fn model() -> DbnModel {
        let spec = ActivationSpec::sigmoid(255, 0.7).unwrap();
        "conv:2:3:1,dense:5".parse::<Architecture>().unwrap().build(ImageShape::new(3, 5, 4), spec, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_model(&m).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_model(&model()).unwrap();
        assert_eq!(&bytes[..4], b"DRBM");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        assert_eq!(bytes[8..12], 2u32.to_le_bytes());
        assert_eq!(bytes[12], KIND_CONV);
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        assert_eq!(bytes[bytes.len() - 4..], crc.to_le_bytes());
    }

    #[test]
    fn every_corrupted_byte_is_caught() {
        let bytes = encode_model(&model()).unwrap();
        for i in 8..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(matches!(decode_model(&b), Err(Error::Data(DataError::Crc { .. }))), "byte {i}");
        }
    }

    #[test]
    fn distinct_header_errors() {
        let bytes = encode_model(&model()).unwrap();
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(decode_model(&b), Err(Error::Data(DataError::BadCheckpointMagic(m))) if &m == b"XRBM"));
        let mut b = bytes.clone();
        b[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_model(&b), Err(Error::Data(DataError::UnsupportedVersion(2)))));
        assert!(matches!(decode_model(&bytes[..10]), Err(Error::Data(DataError::Truncated { .. }))));
    }

    #[test]
    fn lying_header_with_valid_crc_is_malformed() {
        let mut payload = CHECKPOINT_MAGIC.to_vec();
        payload.extend_from_slice(&1u32.to_le_bytes());
        payload.extend_from_slice(&1u32.to_le_bytes());
        payload.push(KIND_DENSE);
        payload.extend_from_slice(&u32::MAX.to_le_bytes());
        payload.extend_from_slice(&u32::MAX.to_le_bytes());
        let crc = crc32fast::hash(&payload);
        payload.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_model(&payload), Err(Error::Data(DataError::MalformedCheckpoint(_)))));
    }

    #[test]
    fn files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.drbm");
        save_model(&model(), &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), model());
    }
}
