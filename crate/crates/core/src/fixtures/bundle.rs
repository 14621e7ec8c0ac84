//! Weight bundle file format.
//!
//! ```text
//! offset 0   8 bytes   magic "CMMWB001"
//! offset 8   u64 LE    header length H in bytes
//! offset 16  H bytes   UTF-8 header, one `key = value` per line
//! 16 + H     payload   little-endian f64 tensors, contiguous, table order
//! ```
//!
//! Header keys, in this exact order:
//!
//! ```text
//! seed = <u64>
//! config.<field> = <value>            one line per CmmConfig field
//! rng.generator = splitmix64-counter
//! rng.gamma = 11400714819323198485
//! rng.normal = acklam-inverse-cdf
//! init.alpha = <f64>
//! init.dt_min = <f64>
//! init.dt_max = <f64>
//! tensors = <count>
//! tensor = <name> <d0>x<d1>... <offset bytes> <length bytes>
//! ```
//!
//! Tensor offsets are relative to the start of the payload. Parsing only
//! accepts the canonical rendering, so parse → emit reproduces the header
//! byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::rng::GAMMA;
use super::{weights_from_tensors, weights_to_tensors, NamedTensor, ALPHA_INIT, DT_MAX, DT_MIN};
use crate::cmm::{CmmConfig, CmmWeights};
use crate::error::{CmmError, Result};
use crate::ssm::SsmBackendChoice;

pub const BUNDLE_MAGIC: &[u8; 8] = b"CMMWB001";

const GENERATOR: &str = "splitmix64-counter";
const NORMAL: &str = "acklam-inverse-cdf";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

impl TensorEntry {
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleHeader {
    pub seed: u64,
    pub config: CmmConfig,
    pub alpha_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub tensors: Vec<TensorEntry>,
}

impl BundleHeader {
    pub fn emit(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "config.tokens = {}", c.tokens);
        let _ = writeln!(s, "config.grids = {}", c.grids);
        let _ = writeln!(s, "config.d_text = {}", c.d_text);
        let _ = writeln!(s, "config.d_vision = {}", c.d_vision);
        let _ = writeln!(s, "config.d_shared = {}", c.d_shared);
        let _ = writeln!(s, "config.heads = {}", c.heads);
        let _ = writeln!(s, "config.top_k = {}", c.top_k);
        let _ = writeln!(s, "config.backend = {}", c.backend);
        let _ = writeln!(s, "config.ffn_hidden = {}", c.ffn_hidden);
        let _ = writeln!(s, "config.state_size = {}", c.state_size);
        let _ = writeln!(s, "config.pool_output = {}", c.pool_output);
        let _ = writeln!(s, "rng.generator = {GENERATOR}");
        let _ = writeln!(s, "rng.gamma = {GAMMA}");
        let _ = writeln!(s, "rng.normal = {NORMAL}");
        let _ = writeln!(s, "init.alpha = {:?}", self.alpha_init);
        let _ = writeln!(s, "init.dt_min = {:?}", self.dt_min);
        let _ = writeln!(s, "init.dt_max = {:?}", self.dt_max);
        let _ = writeln!(s, "tensors = {}", self.tensors.len());
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                s,
                "tensor = {} {} {} {}",
                t.name,
                dims.join("x"),
                t.offset,
                t.length
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<&str> {
            let line = lines
                .next()
                .ok_or_else(|| CmmError::Format(format!("header ends before `{key}`")))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(" = "))
                .ok_or_else(|| CmmError::Format(format!("expected `{key} = ...`, found `{line}`")))
        };

        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| CmmError::Format(format!("`{key}` is not a valid number: `{v}`")))
        }

        let seed = num("seed", field("seed")?)?;
        let config = CmmConfig {
            tokens: num("config.tokens", field("config.tokens")?)?,
            grids: num("config.grids", field("config.grids")?)?,
            d_text: num("config.d_text", field("config.d_text")?)?,
            d_vision: num("config.d_vision", field("config.d_vision")?)?,
            d_shared: num("config.d_shared", field("config.d_shared")?)?,
            heads: num("config.heads", field("config.heads")?)?,
            top_k: num("config.top_k", field("config.top_k")?)?,
            backend: field("config.backend")?
                .parse::<SsmBackendChoice>()
                .map_err(|e| CmmError::Format(e.to_string()))?,
            ffn_hidden: num("config.ffn_hidden", field("config.ffn_hidden")?)?,
            state_size: num("config.state_size", field("config.state_size")?)?,
            pool_output: match field("config.pool_output")? {
                "true" => true,
                "false" => false,
                other => {
                    return Err(CmmError::Format(format!(
                        "config.pool_output must be true or false, found `{other}`"
                    )))
                }
            },
        };
        let generator = field("rng.generator")?;
        let gamma: u64 = num("rng.gamma", field("rng.gamma")?)?;
        let normal = field("rng.normal")?;
        if generator != GENERATOR || gamma != GAMMA || normal != NORMAL {
            return Err(CmmError::Format(format!(
                "unsupported generator `{generator}`/{gamma}/`{normal}`"
            )));
        }
        let alpha_init = num("init.alpha", field("init.alpha")?)?;
        let dt_min = num("init.dt_min", field("init.dt_min")?)?;
        let dt_max = num("init.dt_max", field("init.dt_max")?)?;
        let count: usize = num("tensors", field("tensors")?)?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let spec = field("tensor")?;
            let parts: Vec<&str> = spec.split(' ').collect();
            let [name, dims, offset, length] = parts[..] else {
                return Err(CmmError::Format(format!("malformed tensor entry `{spec}`")));
            };
            let shape = dims
                .split('x')
                .map(|d| num::<usize>("tensor shape", d))
                .collect::<Result<Vec<_>>>()?;
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape,
                offset: num("tensor offset", offset)?,
                length: num("tensor length", length)?,
            });
        }
        if lines.next().is_some() {
            return Err(CmmError::Format("unexpected lines after the tensor table".into()));
        }
        let header = BundleHeader {
            seed,
            config,
            alpha_init,
            dt_min,
            dt_max,
            tensors,
        };
        if header.emit() != text {
            return Err(CmmError::Format("header is not in canonical form".into()));
        }
        Ok(header)
    }
}

/// A decoded bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub header: BundleHeader,
    pub weights: CmmWeights,
}

impl Bundle {
    pub fn config(&self) -> &CmmConfig {
        &self.header.config
    }

    pub fn seed(&self) -> u64 {
        self.header.seed
    }
}

pub fn encode_bundle(w: &CmmWeights, cfg: &CmmConfig, seed: u64) -> Result<Vec<u8>> {
    w.check_shapes(cfg)?;
    let tensors = weights_to_tensors(w);
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|t| {
            let length = 8 * t.data.len() as u64;
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                length,
            };
            offset += length;
            e
        })
        .collect();
    let header = BundleHeader {
        seed,
        config: cfg.clone(),
        alpha_init: ALPHA_INIT,
        dt_min: DT_MIN,
        dt_max: DT_MAX,
        tensors: entries,
    }
    .emit();

    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for t in &tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Bundle> {
    if bytes.len() < 8 || &bytes[..8] != BUNDLE_MAGIC {
        return Err(CmmError::Format("bad magic, not a CMMWB001 bundle".into()));
    }
    if bytes.len() < 16 {
        return Err(CmmError::Format("file ends inside the header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| CmmError::Format("header length exceeds the file".into()))?
        as usize;
    let text = std::str::from_utf8(&bytes[16..header_end])
        .map_err(|_| CmmError::Format("header is not UTF-8".into()))?;
    let header = BundleHeader::parse(text)?;
    let payload = &bytes[header_end..];

    let mut expected_offset = 0u64;
    for t in &header.tensors {
        let elems = t.shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        if elems.and_then(|n| n.checked_mul(8)) != Some(t.length) {
            return Err(CmmError::Format(format!(
                "tensor `{}` declares {} bytes for shape {:?}",
                t.name, t.length, t.shape
            )));
        }
        if t.offset < expected_offset {
            return Err(CmmError::Format(format!(
                "tensor `{}` overlaps the previous tensor",
                t.name
            )));
        }
        if t.offset > expected_offset {
            return Err(CmmError::Format(format!(
                "gap before tensor `{}` in the payload",
                t.name
            )));
        }
        expected_offset = t.end();
    }
    if let Some(t) = header.tensors.iter().find(|t| t.end() > payload.len() as u64) {
        return Err(CmmError::Corruption {
            tensor: t.name.clone(),
        });
    }
    if expected_offset != payload.len() as u64 {
        return Err(CmmError::Format(format!(
            "{} trailing bytes after the last tensor",
            payload.len() as u64 - expected_offset
        )));
    }

    let tensors = header
        .tensors
        .iter()
        .map(|t| NamedTensor {
            name: t.name.clone(),
            shape: t.shape.clone(),
            data: payload[t.offset as usize..t.end() as usize]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        })
        .collect();
    let weights = weights_from_tensors(&header.config, tensors)?;
    Ok(Bundle { header, weights })
}

pub fn save_bundle(w: &CmmWeights, cfg: &CmmConfig, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_bundle(w, cfg, seed)?)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<Bundle> {
    decode_bundle(&fs::read(path)?)
}
