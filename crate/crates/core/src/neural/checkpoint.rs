//! `CLIRCKPT v1`: a magic line, the JSON config, then every parameter as a
//! `name ndim d1 ... dn` header line followed by raw little-endian f64s.

use std::path::Path;

use super::model::{check_layout, init_params};
use super::tensor::{Params, Tensor};
use super::ModelConfig;
use crate::error::{Error, Result};

pub const MAGIC: &str = "CLIRCKPT v1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params,
}

impl Checkpoint {
    /// Freshly initialized parameters seeded by `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Checkpoint { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        check_layout(&config, &params)?;
        Ok(Checkpoint { config, params })
    }

    pub fn format_version(&self) -> u32 {
        FORMAT_VERSION
    }

    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        self.config == other.config && self.params.bitwise_eq(&other.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.value_count());
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        out.push(b'\n');
        for (name, t) in self.params.iter() {
            let mut header = format!("{name} {}", t.shape().len());
            for d in t.shape() {
                header.push_str(&format!(" {d}"));
            }
            out.extend_from_slice(header.as_bytes());
            out.push(b'\n');
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.line()? != MAGIC {
            return Err(Error::Checkpoint(format!("missing `{MAGIC}` magic line")));
        }
        let config: ModelConfig = serde_json::from_str(cursor.line()?)
            .map_err(|e| Error::Checkpoint(format!("bad config line: {e}")))?;
        let mut named = Vec::new();
        while cursor.pos < bytes.len() {
            let header = cursor.line()?;
            let mut fields = header.split(' ');
            let name = fields.next().filter(|n| !n.is_empty()).ok_or_else(|| bad(header))?;
            let ndim: usize = fields.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(header))?;
            let shape = fields.map(|s| s.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>();
            let shape = shape.map_err(|_| bad(header))?;
            if shape.len() != ndim {
                return Err(bad(header));
            }
            let n: usize = shape.iter().product();
            let raw = cursor.take(n * 8)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            named.push((name.to_string(), Tensor::new(shape, values)?));
        }
        let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
        if names.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Checkpoint("parameters are not in strict name order".into()));
        }
        Checkpoint::from_parts(config, Params::from_named(named)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn bad(header: &str) -> Error {
    Error::Checkpoint(format!("malformed parameter header `{header}`"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated header line".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated parameter values".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ModelKind;

    #[test]
    fn round_trips_bitwise() {
        for kind in ModelKind::ALL {
            let c = Checkpoint::init(ModelConfig::toy(kind, 5, 6, 3)).unwrap();
            let bytes = c.to_bytes();
            assert!(bytes.starts_with(b"CLIRCKPT v1\n{\"kind\":"));
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert!(back.bitwise_eq(&c));
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_damage() {
        let c = Checkpoint::init(ModelConfig::toy(ModelKind::DotProduct, 2, 2, 0)).unwrap();
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"CLIRCKPT v2\n{}\n").is_err());
        let mut wrong = c.clone();
        wrong.config.embed_dim = 16;
        assert!(matches!(
            Checkpoint::from_bytes(&wrong.to_bytes()),
            Err(Error::Shape(_))
        ));
    }
}
