//! Versioned binary head files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      b"RGHEAD\0\0"
//! version    u32 (= 1)
//! role       u8  (1 predicate, 2 object, 3 relevance)
//! vocab hash u16 length + UTF-8 bytes
//! seed       u64
//! tool       u16 length + UTF-8 bytes
//! dims       MLP: u32 layers, u32 input dim, then per layer u32 out dim + u8 activation
//!            relevance: u32 feature dim, u32 hidden width
//! params     u64 count, then f64 values in layer order
//! ```

use std::path::Path;

use super::{Activation, Head, Layer, MlpHead, RelevanceHead};
use crate::error::{Error, Result};
use crate::io::ArtifactMeta;

const MAGIC: &[u8; 8] = b"RGHEAD\0\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadRole {
    Predicate,
    Object,
    Relevance,
}

impl HeadRole {
    fn code(self) -> u8 {
        match self {
            HeadRole::Predicate => 1,
            HeadRole::Object => 2,
            HeadRole::Relevance => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(HeadRole::Predicate),
            2 => Ok(HeadRole::Object),
            3 => Ok(HeadRole::Relevance),
            other => Err(Error::Artifact(format!("unknown head role {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredHead {
    Mlp(MlpHead),
    Relevance(RelevanceHead),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedHead {
    pub meta: ArtifactMeta,
    pub role: HeadRole,
    pub head: StoredHead,
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Artifact("string too long".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Artifact("dimension too large".into()))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Artifact("truncated head file".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Artifact("invalid UTF-8 in head file".into()))
    }
}

impl SavedHead {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.role.code());
        put_str(&mut out, &self.meta.vocab_hash)?;
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        put_str(&mut out, &self.meta.tool_version)?;
        let params = match &self.head {
            StoredHead::Mlp(mlp) => {
                if self.role == HeadRole::Relevance {
                    return Err(Error::Artifact(
                        "relevance role requires a relevance head".into(),
                    ));
                }
                put_u32(&mut out, mlp.layers().len())?;
                put_u32(&mut out, mlp.input_dim())?;
                for layer in mlp.layers() {
                    put_u32(&mut out, layer.out_dim)?;
                    out.push(match layer.activation {
                        Activation::Identity => 0,
                        Activation::Relu => 1,
                    });
                }
                mlp.params()
            }
            StoredHead::Relevance(rel) => {
                if self.role != HeadRole::Relevance {
                    return Err(Error::Artifact(
                        "classifier role requires an MLP head".into(),
                    ));
                }
                put_u32(&mut out, rel.feature_dim)?;
                put_u32(&mut out, rel.hidden)?;
                rel.params()
            }
        };
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Artifact("not a head file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Artifact(format!(
                "unsupported head format version {version}"
            )));
        }
        let role = HeadRole::from_code(r.u8()?)?;
        let vocab_hash = r.string()?;
        let seed = r.u64()?;
        let tool_version = r.string()?;
        let meta = ArtifactMeta {
            vocab_hash,
            seed,
            tool_version,
        };

        let head = if role == HeadRole::Relevance {
            let feature_dim = r.u32()?;
            let hidden = r.u32()?;
            StoredHead::Relevance(RelevanceHead::zeros(feature_dim, hidden))
        } else {
            let n_layers = r.u32()?;
            let mut in_dim = r.u32()?;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let out_dim = r.u32()?;
                let activation = match r.u8()? {
                    0 => Activation::Identity,
                    1 => Activation::Relu,
                    other => return Err(Error::Artifact(format!("unknown activation {other}"))),
                };
                layers.push(Layer::zeros(in_dim, out_dim, activation));
                in_dim = out_dim;
            }
            StoredHead::Mlp(MlpHead::from_layers(layers)?)
        };

        let count = r.u64()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            params.push(r.f64()?);
        }
        if !r.bytes.is_empty() {
            return Err(Error::Artifact("trailing bytes in head file".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Artifact("non-finite parameter in head file".into()));
        }
        let head = match head {
            StoredHead::Mlp(mut mlp) => {
                mlp.set_params(&params)?;
                StoredHead::Mlp(mlp)
            }
            StoredHead::Relevance(mut rel) => {
                rel.set_params(&params)?;
                StoredHead::Relevance(rel)
            }
        };
        Ok(Self { meta, role, head })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn into_mlp(self, expected: HeadRole) -> Result<MlpHead> {
        match (self.head, self.role == expected) {
            (StoredHead::Mlp(m), true) => Ok(m),
            _ => Err(Error::Artifact(format!(
                "expected a {expected:?} head, found {:?}",
                self.role
            ))),
        }
    }

    pub fn into_relevance(self) -> Result<RelevanceHead> {
        match self.head {
            StoredHead::Relevance(r) => Ok(r),
            _ => Err(Error::Artifact(format!(
                "expected a Relevance head, found {:?}",
                self.role
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(seed: u64) -> ArtifactMeta {
        ArtifactMeta {
            vocab_hash: "0123456789abcdef".into(),
            seed,
            tool_version: "test".into(),
        }
    }

    #[test]
    fn header_layout() {
        let saved = SavedHead {
            meta: meta(5),
            role: HeadRole::Object,
            head: StoredHead::Mlp(MlpHead::new(3, 0, 2, 1)),
        };
        let bytes = saved.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes[12], 2);
        // Last 8 bytes are the final bias parameter.
        let tail = f64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        assert_eq!(tail, 0.0);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(SavedHead::from_bytes(b"nothead").is_err());
        let saved = SavedHead {
            meta: meta(5),
            role: HeadRole::Relevance,
            head: StoredHead::Relevance(RelevanceHead::new(2, 3, 0)),
        };
        let bytes = saved.to_bytes().unwrap();
        assert!(SavedHead::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(SavedHead::from_bytes(&extra).is_err());
    }

    #[test]
    fn role_mismatch_is_rejected() {
        let saved = SavedHead {
            meta: meta(0),
            role: HeadRole::Predicate,
            head: StoredHead::Mlp(MlpHead::new(2, 2, 2, 0)),
        };
        assert!(saved.clone().into_mlp(HeadRole::Object).is_err());
        assert!(saved.into_relevance().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            seed in any::<u64>(), d in 1usize..6, h in 0usize..6, c in 1usize..6,
            rel in any::<bool>(), scale in -1e3f64..1e3,
        ) {
            let head = if rel {
                let mut r = RelevanceHead::new(d, h.max(1), seed);
                let p: Vec<f64> = r.params().iter().map(|x| x * scale).collect();
                r.set_params(&p).unwrap();
                (HeadRole::Relevance, StoredHead::Relevance(r))
            } else {
                let mut m = MlpHead::new(d, h, c, seed);
                let p: Vec<f64> = m.params().iter().map(|x| x * scale).collect();
                m.set_params(&p).unwrap();
                (HeadRole::Predicate, StoredHead::Mlp(m))
            };
            let saved = SavedHead { meta: meta(seed), role: head.0, head: head.1 };
            let bytes = saved.to_bytes().unwrap();
            let back = SavedHead::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &saved);
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
