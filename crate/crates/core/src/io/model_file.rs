//! Binary model container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "VMS1"  u16 version  u32 S  u32 K  u32 F  u32 P  u8 kind
//! kind 0: S*K*F f64 link, then S*P*K f64 protein latents
//! kind 1: per tensor (LINK, PROT_LATENT, LATENT_INTERMEDIATE, OUTPUT) u8 width u8 frac,
//!         f64 rmse, u32 reference length, reference bytes (UTF-8),
//!         then link and protein raws, ceil(width/8) bytes each, two's complement
//! ```

use crate::error::{Result, VmsError};
use crate::fixedpoint::FixedFormat;
use crate::model::{Dims, ScreeningModel};
use crate::quantize::{QuantizationPlan, QuantizedModel, TensorFormats, TensorId};

pub const MAGIC: &[u8; 4] = b"VMS1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 16 + 1;
const KIND_FLOAT: u8 = 0;
const KIND_QUANTIZED: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Float(ScreeningModel),
    Quantized(QuantizedModel),
}

impl StoredModel {
    pub fn dims(&self) -> Dims {
        match self {
            StoredModel::Float(m) => m.dims(),
            StoredModel::Quantized(q) => q.dims(),
        }
    }
}

fn value_bytes(width: u32) -> usize {
    width.div_ceil(8) as usize
}

fn dim_u32(d: usize) -> u32 {
    u32::try_from(d).expect("validated dims fit in u32")
}

pub fn encode_model(model: &StoredModel) -> Vec<u8> {
    let d = model.dims();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.samples, d.latent, d.features, d.proteins] {
        out.extend_from_slice(&dim_u32(v).to_le_bytes());
    }
    match model {
        StoredModel::Float(m) => {
            out.push(KIND_FLOAT);
            for &x in m.link().iter().chain(m.protein_latents()) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        StoredModel::Quantized(q) => {
            out.push(KIND_QUANTIZED);
            let plan = q.plan();
            for t in TensorId::ALL {
                let f = plan.formats.get(t);
                out.push(f.width() as u8);
                out.push(f.frac() as u8);
            }
            out.extend_from_slice(&plan.achieved_rmse.to_le_bytes());
            let r = plan.reference.as_bytes();
            out.extend_from_slice(&(r.len() as u32).to_le_bytes());
            out.extend_from_slice(r);
            for (raws, w) in [
                (q.link_raw(), plan.formats.link.width()),
                (q.protein_raw(), plan.formats.prot_latent.width()),
            ] {
                let nb = value_bytes(w);
                for &r in raws {
                    out.extend_from_slice(&r.to_le_bytes()[..nb]);
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(VmsError::format(
                self.file,
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn expect_len(&self, needed: u128) -> Result<()> {
        let left = (self.bytes.len() - self.pos) as u128;
        if left != needed {
            return Err(VmsError::format(
                self.file,
                self.pos,
                format!("payload is {left} bytes, header implies {needed}"),
            ));
        }
        Ok(())
    }

    fn signed(&mut self, nb: usize) -> i32 {
        let b = &self.bytes[self.pos..self.pos + nb];
        self.pos += nb;
        let mut buf = if b[nb - 1] & 0x80 != 0 { [0xff; 4] } else { [0; 4] };
        buf[..nb].copy_from_slice(b);
        i32::from_le_bytes(buf)
    }
}

/// Decodes a model container; `file` names the source in errors.
pub fn decode_model(bytes: &[u8], file: &str) -> Result<StoredModel> {
    let mut r = Reader { bytes, pos: 0, file };
    if r.take(4, "magic")? != MAGIC {
        return Err(VmsError::format(file, 0, "bad magic, expected VMS1"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(VmsError::format(file, 4, format!("unsupported version {version}")));
    }
    let mut dv = [0usize; 4];
    for v in dv.iter_mut() {
        *v = r.u32("dims")? as usize;
    }
    let dims = Dims::new(dv[0], dv[1], dv[2], dv[3]);
    dims.validate().map_err(|e| VmsError::format(file, 6, e.to_string()))?;
    let n_link = dims.link_len() as u128;
    let n_prot = dims.protein_len() as u128;
    let kind_pos = r.pos;
    match r.u8("kind")? {
        KIND_FLOAT => {
            r.expect_len((n_link + n_prot) * 8)?;
            let mut vals = Vec::with_capacity((n_link + n_prot) as usize);
            for _ in 0..n_link + n_prot {
                vals.push(r.f64("value")?);
            }
            let prot = vals.split_off(n_link as usize);
            let m = ScreeningModel::new(dims, vals, prot).map_err(|e| VmsError::format(file, HEADER_LEN, e.to_string()))?;
            Ok(StoredModel::Float(m))
        }
        KIND_QUANTIZED => {
            let mut formats = TensorFormats::uniform(FixedFormat::new(8, 0)?);
            for t in TensorId::ALL {
                let at = r.pos;
                let w = r.u8("format width")? as u32;
                let f = r.u8("format frac")? as u32;
                let fmt = FixedFormat::new(w, f).map_err(|e| VmsError::format(file, at, e.to_string()))?;
                formats.set(t, fmt);
            }
            let achieved_rmse = r.f64("rmse")?;
            let n = r.u32("reference length")? as usize;
            let at = r.pos;
            let reference = std::str::from_utf8(r.take(n, "reference")?)
                .map_err(|_| VmsError::format(file, at, "reference is not UTF-8"))?
                .to_owned();
            let plan = QuantizationPlan {
                formats,
                achieved_rmse,
                reference,
            };
            plan.validate().map_err(|e| VmsError::format(file, HEADER_LEN, e.to_string()))?;
            let lb = value_bytes(formats.link.width());
            let pb = value_bytes(formats.prot_latent.width());
            r.expect_len(n_link * lb as u128 + n_prot * pb as u128)?;
            let payload = r.pos;
            let link = (0..n_link).map(|_| r.signed(lb)).collect();
            let prot = (0..n_prot).map(|_| r.signed(pb)).collect();
            let q = QuantizedModel::from_raw(dims, link, prot, plan)
                .map_err(|e| VmsError::format(file, payload, e.to_string()))?;
            Ok(StoredModel::Quantized(q))
        }
        k => Err(VmsError::format(file, kind_pos, format!("unknown model kind {k}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_synthetic, SyntheticSpec};
    use crate::quantize::quantize_model;

    fn small() -> ScreeningModel {
        let spec = SyntheticSpec {
            seed: 2,
            dims: Dims::new(2, 3, 10, 2),
            density: 0.3,
            n_molecules: 1,
        };
        generate_synthetic(&spec).unwrap().0
    }

    fn plan(fmt: &str) -> QuantizationPlan {
        QuantizationPlan {
            formats: TensorFormats::uniform(fmt.parse().unwrap()),
            achieved_rmse: 1.25e-4,
            reference: "calibration set".into(),
        }
    }

    #[test]
    fn float_round_trip() {
        let m = StoredModel::Float(small());
        let bytes = encode_model(&m);
        assert_eq!(bytes.len(), HEADER_LEN + 8 * (60 + 12));
        assert_eq!(decode_model(&bytes, "m").unwrap(), m);
    }

    #[test]
    fn quantized_round_trip_at_odd_widths() {
        for fmt in ["W8F6", "W12F9", "W16F14", "W20F17", "W32F28"] {
            let q = StoredModel::Quantized(quantize_model(&small(), &plan(fmt)).unwrap());
            let bytes = encode_model(&q);
            assert_eq!(decode_model(&bytes, "m").unwrap(), q, "{fmt}");
            assert_eq!(encode_model(&decode_model(&bytes, "m").unwrap()), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_model(&StoredModel::Float(small()));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad, "m"), Err(VmsError::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_model(&bad, "m").is_err());
        assert!(decode_model(&bytes[..bytes.len() - 1], "m").is_err());
        let mut long = bytes.clone();
        long.push(0);
        let err = decode_model(&long, "m").unwrap_err().to_string();
        assert!(err.starts_with("m: byte 23"), "{err}");
        let mut bad = bytes;
        bad[22] = 9;
        assert!(decode_model(&bad, "m").is_err());
        assert!(decode_model(&[], "m").is_err());
    }

    #[test]
    fn rejects_out_of_range_raw() {
        let q = quantize_model(&small(), &plan("W12F9")).unwrap();
        let mut bytes = encode_model(&StoredModel::Quantized(q));
        let n = bytes.len();
        // last protein raw: 0x7ff is the W12 maximum, 0x0fff sign-extends from 16 bits as +4095
        bytes[n - 2] = 0xff;
        bytes[n - 1] = 0x0f;
        assert!(decode_model(&bytes, "m").is_err());
    }
}
