//! Binary checkpoints. All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes  "WCELL\0CK"
//! format_version   u32      currently 1
//! variant_tag      u32      0 srnn, 1 lstm, 2 lstm-srnn, 3 lstm-srnn-out,
//!                           4 lstm-srnn-hidden, 5 coupled
//! input_dim        u32
//! hidden_dim       u32
//! layers           u32
//! directions       u32
//! block_count      u32
//! block_count × {
//!     name_len     u32
//!     name         name_len bytes, UTF-8
//!     value_count  u64
//!     values       value_count × f64, row-major
//! }
//! meta_count       u32
//! meta_count × {
//!     key_len u32, key bytes, value_len u32, value bytes (UTF-8)
//! }
//! ```
//!
//! Blocks appear in the network's canonical order (see
//! [`Network`]'s `ParamSet` impl); the head's output size is read from
//! `head.b`. A language model stores its vocabulary under the meta key
//! `vocab` as the id-ordered characters.

use std::fs;
use std::path::Path;

use crate::cells::Variant;
use crate::error::{Error, Result};
use crate::model::{Architecture, Network};
use crate::params::ParamSet;
use crate::tasks::Vocab;

pub const MAGIC: &[u8; 8] = b"WCELL\0CK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub vocab: Option<Vocab>,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(network: Network) -> Self {
        Checkpoint {
            network,
            vocab: None,
            meta: Vec::new(),
        }
    }

    pub fn with_vocab(mut self, vocab: Vocab) -> Self {
        self.vocab = Some(vocab);
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let arch = self.network.arch();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            FORMAT_VERSION,
            arch.variant.tag(),
            arch.input_dim as u32,
            arch.hidden_dim as u32,
            arch.layers as u32,
            arch.directions as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let blocks = self.network.blocks();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, values) in blocks {
            put_str(&mut out, &name);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut meta = self.meta.clone();
        if let Some(vocab) = &self.vocab {
            meta.retain(|(k, _)| k != "vocab");
            meta.push(("vocab".into(), vocab.chars().iter().collect()));
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        for (k, v) in &meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let raw = RawCheckpoint::parse(bytes)?;
        let output_dim = raw
            .blocks
            .iter()
            .find(|(n, _)| n == "head.b")
            .map(|(_, v)| v.len())
            .ok_or_else(|| bad("missing block `head.b`"))?;
        let variant = Variant::from_tag(raw.variant_tag)
            .ok_or_else(|| bad(&format!("unknown variant tag {}", raw.variant_tag)))?;
        let arch = Architecture {
            variant,
            input_dim: raw.input_dim as usize,
            hidden_dim: raw.hidden_dim as usize,
            output_dim,
            layers: raw.layers as usize,
            directions: raw.directions as usize,
        };
        let mut network = Network::zeros(arch).map_err(|e| bad(&e.to_string()))?;
        {
            let mut slots = network.blocks_mut();
            if slots.len() != raw.blocks.len() {
                return Err(bad(&format!(
                    "expected {} blocks for this architecture, found {}",
                    slots.len(),
                    raw.blocks.len()
                )));
            }
            for ((name, slot), (raw_name, values)) in slots.iter_mut().zip(&raw.blocks) {
                if name != raw_name {
                    return Err(bad(&format!("expected block `{name}`, found `{raw_name}`")));
                }
                if slot.len() != values.len() {
                    return Err(bad(&format!(
                        "block `{name}` has {} values, expected {}",
                        values.len(),
                        slot.len()
                    )));
                }
                slot.copy_from_slice(values);
            }
        }
        let mut vocab = None;
        let mut meta = Vec::new();
        for (k, v) in raw.meta {
            if k == "vocab" {
                vocab = Some(Vocab::from_chars(v.chars().collect()).map_err(|e| bad(&e.to_string()))?);
            } else {
                meta.push((k, v));
            }
        }
        Ok(Checkpoint { network, vocab, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Header fields and blocks exactly as serialized, without interpreting them.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub format_version: u32,
    pub variant_tag: u32,
    pub input_dim: u32,
    pub hidden_dim: u32,
    pub layers: u32,
    pub directions: u32,
    pub blocks: Vec<(String, Vec<f64>)>,
    pub meta: Vec<(String, String)>,
}

impl RawCheckpoint {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let format_version = r.u32()?;
        if format_version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {format_version}")));
        }
        let variant_tag = r.u32()?;
        let input_dim = r.u32()?;
        let hidden_dim = r.u32()?;
        let layers = r.u32()?;
        let directions = r.u32()?;
        let block_count = r.u32()?;
        let mut blocks = Vec::new();
        for _ in 0..block_count {
            let name = r.string()?;
            let count = r.u64()? as usize;
            let data = r.take(count.checked_mul(8).ok_or_else(|| bad("block too large"))?)?;
            let values = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            blocks.push((name, values));
        }
        let meta_count = r.u32()?;
        let mut meta = Vec::new();
        for _ in 0..meta_count {
            meta.push((r.string()?, r.string()?));
        }
        if r.pos != bytes.len() {
            return Err(bad(&format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(RawCheckpoint {
            format_version,
            variant_tag,
            input_dim,
            hidden_dim,
            layers,
            directions,
            blocks,
            meta,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn bad(msg: &str) -> Error {
    Error::Checkpoint(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(&format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid UTF-8 in name"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample(variant: Variant, directions: usize) -> Network {
        let arch = Architecture {
            variant,
            input_dim: 5,
            hidden_dim: 3,
            output_dim: 4,
            layers: 2,
            directions,
        };
        Network::init(arch, &mut Rng::new(8)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in Variant::ALL {
            for directions in [1, 2] {
                let net = sample(variant, directions);
                let ck = Checkpoint::new(net.clone());
                let back = Checkpoint::decode(&ck.encode()).unwrap();
                assert_eq!(back.network, net);
            }
        }
    }

    #[test]
    fn vocab_and_meta_survive() {
        let vocab = Vocab::from_text("hello, world\n".chars());
        let mut ck = Checkpoint::new(sample(Variant::Lstm, 1)).with_vocab(vocab.clone());
        ck.meta.push(("seed".into(), "7".into()));
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back.vocab, Some(vocab));
        assert_eq!(back.meta("seed"), Some("7"));
    }

    #[test]
    fn header_layout() {
        let bytes = Checkpoint::new(sample(Variant::CoupledGate, 2)).encode();
        assert_eq!(&bytes[..8], MAGIC);
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        assert_eq!(
            [word(0), word(1), word(2), word(3), word(4), word(5)],
            [1, 5, 5, 3, 2, 2]
        );
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = Checkpoint::new(sample(Variant::Srnn, 1)).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::decode(&wrong).is_err());
        let mut version = bytes.clone();
        version[8] = 9;
        assert!(Checkpoint::decode(&version)
            .unwrap_err()
            .to_string()
            .contains("version"));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
    }

    #[test]
    fn load_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ck");
        fs::write(&path, b"nope").unwrap();
        assert!(Checkpoint::load(&path).unwrap_err().to_string().contains("junk.ck"));
    }
}
