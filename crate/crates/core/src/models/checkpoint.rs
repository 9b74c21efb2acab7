//! Self-describing checkpoints: named `f32` arrays in the safetensors layout
//! (`backbone.*`, `head.*`, `sa.*`) plus a metadata record holding the format
//! version, the producing configuration and the seed.
//!
//! The metadata is a single JSON-valued entry so that saved bytes do not
//! depend on map iteration order.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::ModelBundle;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::ParamSet;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "puregaze-checkpoint";
const METADATA_KEY: &str = "puregaze";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    backbone: String,
    seed: u64,
    step: u64,
    config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub seed: u64,
    /// Optimisation steps taken so far, fine-tuning included.
    pub step: u64,
    pub bundle: ModelBundle,
}

fn le_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn groups(bundle: &ModelBundle) -> [(&'static str, &ParamSet); 3] {
    [
        ("backbone", bundle.backbone().params()),
        ("head", bundle.head().params()),
        ("sa", bundle.sa().params()),
    ]
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut buffers = Vec::new();
    for (group, params) in groups(&ckpt.bundle) {
        for p in &params.params {
            buffers.push((format!("{group}.{}", p.name), p.shape.clone(), le_bytes(&p.data)));
        }
    }
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let header = Header {
        format: FORMAT_TAG.into(),
        version: CHECKPOINT_VERSION,
        backbone: ckpt.bundle.backbone().kind().to_string(),
        seed: ckpt.seed,
        step: ckpt.step,
        config: ckpt.config.clone(),
    };
    let header_json = serde_json::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let metadata = HashMap::from([(METADATA_KEY.to_string(), header_json)]);
    let bytes = safetensors::serialize(views, &Some(metadata))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let meta = header
        .metadata()
        .as_ref()
        .ok_or_else(|| bad("missing metadata record".into()))?;
    let raw = meta
        .get(METADATA_KEY)
        .ok_or_else(|| bad("not a gaze checkpoint".into()))?;
    let header: Header = serde_json::from_str(raw).map_err(|e| bad(format!("metadata record: {e}")))?;
    if header.format != FORMAT_TAG {
        return Err(bad("not a gaze checkpoint".into()));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {}", header.version)));
    }
    let Header { config, seed, step, .. } = header;

    // Rebuild the architecture from the config, then overwrite every array by name.
    let structure = TrainConfig {
        init_from: None,
        ..config.clone()
    };
    let mut bundle = super::build_bundle(&structure)?;
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let mut expected = 0;
    {
        let mut fill = |group: &str, params: &mut ParamSet| -> Result<()> {
            for p in params.params.iter_mut() {
                let name = format!("{group}.{}", p.name);
                let view = tensors
                    .tensor(&name)
                    .map_err(|_| bad(format!("missing array '{name}'")))?;
                if view.dtype() != Dtype::F32 || view.shape() != p.shape.as_slice() {
                    return Err(bad(format!(
                        "array '{name}' has shape {:?}, expected {:?}",
                        view.shape(),
                        p.shape
                    )));
                }
                for (dst, chunk) in p.data.iter_mut().zip(view.data().chunks_exact(4)) {
                    *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                }
                expected += 1;
            }
            Ok(())
        };
        fill("backbone", bundle.backbone_mut().params_mut())?;
        fill("head", bundle.head_mut().params_mut())?;
        fill("sa", bundle.sa_mut().params_mut())?;
    }
    if tensors.len() != expected {
        return Err(bad(format!(
            "checkpoint holds {} arrays, architecture expects {expected}",
            tensors.len()
        )));
    }
    Ok(Checkpoint {
        config,
        seed,
        step,
        bundle,
    })
}
