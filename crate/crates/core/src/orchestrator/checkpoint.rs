//! Single-file checkpoints: every tensor in a safetensors archive, with the
//! configuration and training progress as JSON metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::agent::AdvNormState;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const FORMAT: &str = "daynight-checkpoint";
pub const VERSION: u32 = 1;

/// Named random streams of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStreams {
    pub levels: StreamRng,
    pub policy: StreamRng,
    pub world: StreamRng,
    pub replay: StreamRng,
    pub dream: StreamRng,
    pub eval: StreamRng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub day_epochs_done: usize,
    pub night_epochs_done: usize,
    pub real_steps: usize,
    pub replay_episodes: usize,
    pub metrics_records: usize,
    pub world_adam_steps: u64,
    pub agent_adam_steps: u64,
    pub day_adv: AdvNormState,
    pub night_adv: AdvNormState,
    pub streams: RunStreams,
    /// World-model fingerprint when the day phase ended.
    pub frozen_world_hash: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub progress: Progress,
    /// Keys are prefixed by owner: `world/`, `agent/`, `world_opt/`, `agent_opt/`.
    pub tensors: BTreeMap<String, Tensor>,
}

/// Tensors under `prefix/`, with the prefix removed.
pub fn section(tensors: &BTreeMap<String, Tensor>, prefix: &str) -> BTreeMap<String, Tensor> {
    let p = format!("{prefix}/");
    tensors
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(&p).map(|rest| (rest.to_string(), v.clone())))
        .collect()
}

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    Ok(match t.dtype() {
        DType::F64 => (
            Dtype::F64,
            t.flatten_all()?.to_vec1::<f64>()?.iter().flat_map(|x| x.to_le_bytes()).collect(),
        ),
        _ => (
            Dtype::F32,
            t.to_dtype(DType::F32)?
                .flatten_all()?
                .to_vec1::<f32>()?
                .iter()
                .flat_map(|x| x.to_le_bytes())
                .collect(),
        ),
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buffers = Vec::with_capacity(ckpt.tensors.len());
    for (name, t) in &ckpt.tensors {
        let (dtype, bytes) = tensor_bytes(t)?;
        buffers.push((name.clone(), dtype, t.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(name, dtype, shape, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([
        ("format".to_string(), FORMAT.to_string()),
        ("version".to_string(), VERSION.to_string()),
        ("config".to_string(), serde_json::to_string(&ckpt.config)?),
        ("progress".to_string(), serde_json::to_string(&ckpt.progress)?),
    ]);
    let tmp = path.with_extension("tmp");
    safetensors::serialize_to_file(views, Some(meta), &tmp)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let meta = header.metadata().clone().ok_or_else(|| bad("missing metadata".into()))?;
    let field = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing metadata field {k}")));
    if field("format")? != FORMAT {
        return Err(bad("not a checkpoint file".into()));
    }
    let version: u32 = field("version")?.parse().map_err(|_| bad("malformed version".into()))?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let config: ExperimentConfig = serde_json::from_str(field("config")?)?;
    let progress: Progress = serde_json::from_str(field("progress")?)?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let dtype = match view.dtype() {
            Dtype::F32 => DType::F32,
            Dtype::F64 => DType::F64,
            other => return Err(bad(format!("tensor {name} has unsupported dtype {other:?}"))),
        };
        let t = Tensor::from_raw_buffer(view.data(), dtype, view.shape(), &Device::Cpu)?;
        tensors.insert(name, t);
    }
    Ok(Checkpoint {
        config,
        progress,
        tensors,
    })
}
