//! Versioned binary checkpoint format for the per-site Q-networks, plus
//! the JSON sidecar holding the training configuration.
//!
//! Layout: magic, format version, cell count, layer dimensions, the
//! action-convention tag, then per agent its site id followed by row-major
//! 64-bit float weight and bias blocks per layer. Writes go through a
//! temporary file and a rename.

use std::path::Path;

use thiserror::Error;

use crate::env::ACTION_CONVENTION;
use crate::marl::{AgentBundle, TrainConfig};
use crate::nn::{Layer, Mlp};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RANRESQN";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_DIMS: usize = 16;
const MAX_DIM: u32 = 1_000_000;
const MAX_AGENTS: u32 = 10_000;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint action convention {got:?} differs from {expected:?}")]
    ConventionMismatch { expected: String, got: String },
    #[error("agents disagree on network dimensions")]
    InconsistentAgents,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("sidecar JSON: {0}")]
    Sidecar(#[from] serde_json::Error),
}

/// Header fields of a decoded checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub n_cells: usize,
    pub dims: Vec<usize>,
    pub action_convention: String,
}

pub fn save(path: &Path, agents: &[AgentBundle], n_cells: usize) -> Result<(), CheckpointError> {
    let bytes = encode(agents, n_cells)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("bin.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Vec<AgentBundle>, CheckpointMeta), CheckpointError> {
    let data = std::fs::read(path)?;
    decode(&data)
}

pub fn write_sidecar(path: &Path, cfg: &TrainConfig) -> Result<(), CheckpointError> {
    let text = serde_json::to_string_pretty(cfg)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<TrainConfig, CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn encode(agents: &[AgentBundle], n_cells: usize) -> Result<Vec<u8>, CheckpointError> {
    let first = agents
        .first()
        .ok_or_else(|| CheckpointError::Malformed("no agents to save".into()))?;
    let dims = &first.online.dims;
    if agents.iter().any(|a| &a.online.dims != dims) {
        return Err(CheckpointError::InconsistentAgents);
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n_cells as u32).to_le_bytes());
    out.extend_from_slice(&(agents.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    let tag = ACTION_CONVENTION.as_bytes();
    out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    out.extend_from_slice(tag);
    for agent in agents {
        out.extend_from_slice(&(agent.site_id as u32).to_le_bytes());
        for layer in &agent.online.layers {
            for v in &layer.w {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &layer.b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode(data: &[u8]) -> Result<(Vec<AgentBundle>, CheckpointMeta), CheckpointError> {
    let mut cursor = Cursor { data, pos: 0 };
    let magic = cursor.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cursor.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let n_cells = cursor.u32()? as usize;
    let n_agents = cursor.u32()?;
    if n_agents == 0 || n_agents > MAX_AGENTS {
        return Err(CheckpointError::Malformed(format!(
            "agent count {n_agents} out of range"
        )));
    }
    let n_dims = cursor.u32()? as usize;
    if n_dims < 2 || n_dims > MAX_DIMS {
        return Err(CheckpointError::Malformed(format!(
            "dimension count {n_dims} out of range"
        )));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        let d = cursor.u32()?;
        if d == 0 || d > MAX_DIM {
            return Err(CheckpointError::Malformed(format!("dimension {d} out of range")));
        }
        dims.push(d as usize);
    }
    let tag_len = cursor.u32()? as usize;
    if tag_len > 256 {
        return Err(CheckpointError::Malformed(format!("tag length {tag_len}")));
    }
    let tag_bytes = cursor.take(tag_len)?;
    let tag = String::from_utf8(tag_bytes.to_vec())
        .map_err(|_| CheckpointError::Malformed("tag is not UTF-8".into()))?;
    if tag != ACTION_CONVENTION {
        return Err(CheckpointError::ConventionMismatch {
            expected: ACTION_CONVENTION.to_string(),
            got: tag,
        });
    }

    // Validate the remaining length before reading any weight block.
    let mut params_per_agent: usize = 0;
    for pair in dims.windows(2) {
        let w = pair[0]
            .checked_mul(pair[1])
            .ok_or_else(|| CheckpointError::Malformed("layer size overflow".into()))?;
        params_per_agent = params_per_agent
            .checked_add(w + pair[1])
            .ok_or_else(|| CheckpointError::Malformed("parameter count overflow".into()))?;
    }
    let per_agent_bytes = 4 + params_per_agent * 8;
    let expected = per_agent_bytes
        .checked_mul(n_agents as usize)
        .ok_or_else(|| CheckpointError::Malformed("size overflow".into()))?;
    let remaining = cursor.remaining();
    if remaining < expected {
        return Err(CheckpointError::Truncated);
    }
    if remaining > expected {
        return Err(CheckpointError::TrailingBytes(remaining - expected));
    }

    let mut agents = Vec::with_capacity(n_agents as usize);
    for _ in 0..n_agents {
        let site_id = cursor.u32()? as usize;
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let mut w = Vec::with_capacity(n_in * n_out);
            for _ in 0..n_in * n_out {
                let v = cursor.f64()?;
                if !v.is_finite() {
                    return Err(CheckpointError::Malformed("non-finite weight".into()));
                }
                w.push(v);
            }
            let mut b = Vec::with_capacity(n_out);
            for _ in 0..n_out {
                let v = cursor.f64()?;
                if !v.is_finite() {
                    return Err(CheckpointError::Malformed("non-finite bias".into()));
                }
                b.push(v);
            }
            layers.push(Layer { n_in, n_out, w, b });
        }
        let net = Mlp {
            dims: dims.clone(),
            layers,
        };
        agents.push(AgentBundle::from_params(site_id, net));
    }
    Ok((
        agents,
        CheckpointMeta {
            n_cells,
            dims,
            action_convention: tag,
        },
    ))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::Truncated);
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}
