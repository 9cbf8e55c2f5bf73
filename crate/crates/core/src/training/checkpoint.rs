use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{BlockKind, DiffusionConfig, HybridPattern, ModelConfig};
use crate::data::store::{read_json, write_json};
use crate::denoiser::{block_prefix, zero_block_outputs};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::io;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub pattern: HybridPattern,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub params: Vec<ParamEntry>,
}

/// Writes `manifest.json` and one float64 tensor file per parameter.
pub fn save_checkpoint(model: &Model, dcfg: &DiffusionConfig, dir: &Path) -> Result<()> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut params = Vec::with_capacity(model.params.len());
    for (name, p) in model.params.iter() {
        let file = format!("params/{name}.uhnd");
        io::save_f64(&dir.join(&file), &p.value)?;
        params.push(ParamEntry {
            name: name.clone(),
            shape: p.value.shape().to_vec(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        pattern: model.config.pattern.clone(),
        model: model.config.clone(),
        diffusion: dcfg.clone(),
        params,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Rebuilds the model described by the manifest and loads every parameter.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, DiffusionConfig)> {
    let path = dir.join("manifest.json");
    let m: CheckpointManifest = read_json(&path)?;
    if m.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!(
                "checkpoint format {} (expected {CHECKPOINT_FORMAT_VERSION})",
                m.format_version
            ),
        ));
    }
    if m.pattern != m.model.pattern {
        return Err(Error::Checkpoint(format!(
            "manifest pattern {} disagrees with model pattern {}",
            m.pattern, m.model.pattern
        )));
    }
    let mut model = Model::new(m.model.clone(), 0)?;
    if model.params.len() != m.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, configuration needs {}",
            m.params.len(),
            model.params.len()
        )));
    }
    for e in &m.params {
        let t = io::load(&dir.join(&e.file))?;
        let p = model
            .params
            .get_mut(&e.name)
            .map_err(|_| Error::Checkpoint(format!("unexpected parameter '{}'", e.name)))?;
        if t.shape() != e.shape.as_slice() || t.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter '{}' has shape {:?}, expected {:?}",
                e.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    Ok((model, m.diffusion))
}

/// Starts from a checkpoint under `new_cfg`, which may only differ by an
/// appended task-aware block. Pretrained weights are copied verbatim; the new
/// block gets fresh weights with its residual outputs zeroed, so the model's
/// forward pass is unchanged until training moves them.
pub fn finetune(dir: &Path, new_cfg: &ModelConfig, seed: u64) -> Result<Model> {
    let (old, _) = load_checkpoint(dir)?;
    let old_pattern = &old.config.pattern;
    let mut same_rest = new_cfg.clone();
    same_rest.pattern = old_pattern.clone();
    if same_rest != old.config {
        return Err(Error::Checkpoint(
            "finetune configuration differs from the checkpoint beyond the block pattern".into(),
        ));
    }
    if new_cfg.pattern == *old_pattern {
        return Ok(old);
    }
    if old_pattern.has_tat() || new_cfg.pattern != old_pattern.with_tat() {
        return Err(Error::Checkpoint(format!(
            "pattern {} is not the checkpoint pattern {} with a task-aware block appended",
            new_cfg.pattern, old_pattern
        )));
    }
    let mut model = Model::new(new_cfg.clone(), seed)?;
    let tat = block_prefix(old_pattern.blocks().len(), BlockKind::Tat);
    for (name, p) in model.params.iter_mut() {
        match old.params.get(name) {
            Ok(src) => p.value = src.value.clone(),
            Err(_) if name.starts_with(&format!("{tat}.")) => {}
            Err(_) => {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' missing from checkpoint"
                )))
            }
        }
    }
    zero_block_outputs(&mut model.params, &tat)?;
    Ok(model)
}
