//! Model, diffusion and training settings, all serializable as JSON.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{DimMode, JointSet, SplitSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Eam,
    Sat,
    Tat,
}

impl BlockKind {
    pub fn tag(self) -> &'static str {
        match self {
            BlockKind::Eam => "EAM",
            BlockKind::Sat => "SAT",
            BlockKind::Tat => "TAT",
        }
    }
}

/// Ordered denoiser blocks, written `EAM-EAM-SAT`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HybridPattern(pub Vec<BlockKind>);

impl HybridPattern {
    /// The five EAM/SAT arrangements compared when choosing the default.
    pub fn standard() -> [HybridPattern; 5] {
        [
            "SAT-EAM",
            "EAM-SAT",
            "SAT-EAM-EAM",
            "EAM-SAT-EAM",
            "EAM-EAM-SAT",
        ]
        .map(|s| s.parse().expect("valid pattern"))
    }

    pub fn blocks(&self) -> &[BlockKind] {
        &self.0
    }

    pub fn has_tat(&self) -> bool {
        self.0.contains(&BlockKind::Tat)
    }

    pub fn with_tat(&self) -> Self {
        let mut v = self.0.clone();
        v.push(BlockKind::Tat);
        HybridPattern(v)
    }
}

impl Default for HybridPattern {
    fn default() -> Self {
        HybridPattern(vec![BlockKind::Eam, BlockKind::Eam, BlockKind::Sat])
    }
}

impl fmt::Display for HybridPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags: Vec<_> = self.0.iter().map(|b| b.tag()).collect();
        f.write_str(&tags.join("-"))
    }
}

impl FromStr for HybridPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let blocks = s
            .split('-')
            .map(|t| match t.trim().to_ascii_uppercase().as_str() {
                "EAM" => Ok(BlockKind::Eam),
                "SAT" => Ok(BlockKind::Sat),
                "TAT" => Ok(BlockKind::Tat),
                other => Err(Error::Config(format!(
                    "unknown block '{other}' in pattern '{s}'"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        if blocks.is_empty() || s.trim().is_empty() {
            return Err(Error::Config(
                "hybrid pattern must name at least one block".into(),
            ));
        }
        Ok(HybridPattern(blocks))
    }
}

impl Serialize for HybridPattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for HybridPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where per-frame vision-language features come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VlProvider {
    /// Precomputed features stored with the clip.
    File,
    /// Seeded hash of frame index and prompt.
    Stub,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dims: [usize; 3],
    pub resolution: f64,
    pub origin: [f64; 3],
}

impl Default for GridMeta {
    fn default() -> Self {
        Self {
            dims: [20, 20, 20],
            resolution: 0.05,
            origin: [-0.5, -0.3, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub mode: DimMode,
    /// Latent channels `f`.
    pub latent_dim: usize,
    /// Width `x` of each feature stream before fusion.
    pub feature_dim: usize,
    pub heads: usize,
    pub d_state: usize,
    pub pattern: HybridPattern,
    /// Prediction targets; the indicator width is their count.
    pub joint_ids: Vec<usize>,
    pub vl_provider: VlProvider,
    /// Width of file-provided VL features.
    pub vl_dim: usize,
    pub prompt: String,
    /// Seed of the stub text and VL hashes.
    pub embed_seed: u64,
    /// Forecast future egomotion; when off, the last observed egomotion is held.
    pub emf: bool,
    pub voxels: bool,
    pub grid: GridMeta,
    /// One observed frame and a static camera.
    pub hat_mode: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: DimMode::Three,
            latent_dim: 64,
            feature_dim: 64,
            heads: 4,
            d_state: 8,
            pattern: HybridPattern::default(),
            joint_ids: vec![0],
            vl_provider: VlProvider::File,
            vl_dim: 32,
            prompt: "hand".into(),
            embed_seed: 0,
            emf: true,
            voxels: true,
            grid: GridMeta::default(),
            hat_mode: false,
        }
    }
}

impl ModelConfig {
    pub fn joint_set(&self) -> Result<JointSet> {
        JointSet::mano()
            .subset(&self.joint_ids)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn targets(&self) -> usize {
        self.joint_ids.len()
    }

    pub fn vl_width(&self) -> usize {
        match self.vl_provider {
            VlProvider::File => self.vl_dim,
            VlProvider::Stub => self.feature_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.feature_dim == 0 || self.d_state == 0 || self.heads == 0 {
            return Err(Error::Config(
                "latent_dim, feature_dim, d_state and heads must be positive".into(),
            ));
        }
        if !self.latent_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "latent_dim {} is not divisible by {} heads",
                self.latent_dim, self.heads
            )));
        }
        if self.pattern.blocks().is_empty() {
            return Err(Error::Config(
                "hybrid pattern must name at least one block".into(),
            ));
        }
        self.joint_set()?;
        let g = &self.grid;
        if !(g.resolution.is_finite() && g.resolution > 0.0) || g.dims.contains(&0) {
            return Err(Error::Config(
                "voxel grid needs positive dims and resolution".into(),
            ));
        }
        if self.voxels && g.dims != [20, 20, 20] {
            return Err(Error::Config(format!(
                "voxel encoder expects a 20³ grid, got {:?}",
                g.dims
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Sqrt,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    /// Reverse steps used by the hand branch at inference.
    pub hmf_steps: usize,
    pub split: SplitSpec,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            schedule: ScheduleKind::Sqrt,
            hmf_steps: 20,
            split: SplitSpec::default(),
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config(format!(
                "diffusion needs at least 2 steps, got {}",
                self.steps
            )));
        }
        if self.hmf_steps == 0 || self.hmf_steps > self.steps {
            return Err(Error::Config(format!(
                "hmf_steps must lie in 1..={}, got {}",
                self.steps, self.hmf_steps
            )));
        }
        Ok(())
    }
}

/// Weights of the six training losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub vlb_em: f64,
    pub vlb_hm: f64,
    pub dis: f64,
    pub angle: f64,
    pub reg: f64,
    pub int: f64,
}

impl Default for LossWeights {
    /// The latent terms are sums over `N_f × f` squared entries, so they get
    /// a small weight to stay on the scale of the metric losses.
    fn default() -> Self {
        Self {
            vlb_em: 0.01,
            vlb_hm: 0.01,
            dis: 1.0,
            angle: 0.5,
            reg: 0.5,
            int: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.vlb_em,
            self.vlb_hm,
            self.dis,
            self.angle,
            self.reg,
            self.int,
        ]
    }

    pub fn zero() -> Self {
        Self {
            vlb_em: 0.0,
            vlb_hm: 0.0,
            dis: 0.0,
            angle: 0.0,
            reg: 0.0,
            int: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Checkpoint directory to start from; a trailing TAT is appended when
    /// the new pattern asks for one.
    pub finetune_from: Option<String>,
    /// Validation ADE/FDE is logged every this many epochs (0 disables).
    pub eval_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lr: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 500,
            batch_size: 8,
            seed: 0,
            finetune_from: None,
            eval_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self
            .weights
            .as_array()
            .iter()
            .find(|w| !(w.is_finite() && **w >= 0.0))
        {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0, got {w}"
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "lr must be positive and batch_size at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.weight_decay < 0.0
        {
            return Err(Error::Config(
                "betas must lie in [0, 1) and weight_decay be >= 0".into(),
            ));
        }
        Ok(())
    }
}
