//! Checkpoint file: `MOECKPT1 <len> <json>\n`, then every parameter and
//! state tensor as little-endian f32 in visiting order, then the Adam
//! moments `m` and `v` of each trainable tensor.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ArchSpec, Network};

pub const MAGIC: &str = "MOECKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub arch: ArchSpec,
    pub optimizer_steps: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let mut moments = Vec::new();
    net.visit(&mut |p| {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            trainable: p.trainable,
        });
        p.value.iter().for_each(|&v| blob.extend_from_slice(&(v as f32).to_le_bytes()));
        if p.trainable {
            p.m.iter().chain(&p.v).for_each(|&v| moments.extend_from_slice(&(v as f32).to_le_bytes()));
        }
    });
    let header = CheckpointHeader {
        version: VERSION,
        arch: net.spec().clone(),
        optimizer_steps: net.optimizer_steps(),
        tensors,
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = format!("{MAGIC} {} {json}\n", json.len()).into_bytes();
    out.extend(blob);
    out.extend(moments);
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    let prefix = format!("{MAGIC} ");
    if !bytes.starts_with(prefix.as_bytes()) {
        return Err(bad("missing magic"));
    }
    let rest = &bytes[prefix.len()..];
    let space = rest.iter().position(|&b| b == b' ').ok_or_else(|| bad("missing header length"))?;
    let len: usize = std::str::from_utf8(&rest[..space])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("header length is not a number"))?;
    let start = prefix.len() + space + 1;
    let end = start.checked_add(len).filter(|&e| e < bytes.len()).ok_or_else(|| bad("truncated header"))?;
    if bytes[end] != b'\n' {
        return Err(bad("header not newline-terminated"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[start..end]).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    Ok((header, end + 1))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let (header, mut pos) = parse_header(bytes)?;
    let mut net = Network::build(&header.arch)?;
    let mut expected = Vec::new();
    net.visit(&mut |p| {
        expected.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            trainable: p.trainable,
        })
    });
    if expected != header.tensors {
        return Err(bad("tensor list does not match the architecture"));
    }
    let values: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let moments: usize = expected
        .iter()
        .filter(|t| t.trainable)
        .map(|t| 2 * t.shape.iter().product::<usize>())
        .sum();
    if bytes.len() - pos != 4 * (values + moments) {
        return Err(bad(format!(
            "payload is {} bytes, expected {}",
            bytes.len() - pos,
            4 * (values + moments)
        )));
    }
    let read = |dst: &mut [f64], pos: &mut usize| {
        for v in dst {
            let b: [u8; 4] = bytes[*pos..*pos + 4].try_into().expect("length checked");
            *v = f64::from(f32::from_le_bytes(b));
            *pos += 4;
        }
    };
    net.visit_mut(&mut |p| read(&mut p.value, &mut pos));
    net.visit_mut(&mut |p| {
        if p.trainable {
            read(&mut p.m, &mut pos);
            read(&mut p.v, &mut pos);
        }
    });
    net.steps = header.optimizer_steps;
    Ok(net)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let bytes = to_bytes(net)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    from_bytes(&fs::read(path)?)
}

/// Header only, without rebuilding the network.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(parse_header(&fs::read(path)?)?.0)
}
