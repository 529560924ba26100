use serde::{Deserialize, Serialize};
use thiserror::Error;
use vdt_numerics::{DenseTensor, NumericsError};

#[derive(Debug, Error)]
pub enum DitError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("latent extent {extent} not divisible by patch extent {patch} on axis {axis}")]
    NonDivisiblePatch { axis: &'static str, extent: usize, patch: usize },
    #[error("timestep embedding dim must be even, got {0}")]
    OddEmbedDim(usize),
    #[error("conditioning error: {0}")]
    Conditioning(String),
}

/// How each block projects the timestep embedding into its nine modulation
/// vectors: a full `d x 9d` map, or its two-factor low-rank decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdalnMode {
    Full,
    Lora { rank: usize },
}

/// Architecture of the toy diffusion transformer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiTConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub adaln_mode: AdalnMode,
    pub cross_dim: usize,
    pub mlp_ratio: f64,
}

/// Flat JSON schema: keys layers, hidden, heads, adaln_mode ("full"|"lora"),
/// rank (lora only), cross_dim, mlp_ratio.
#[derive(Serialize, Deserialize)]
struct DiTConfigWire {
    layers: usize,
    hidden: usize,
    heads: usize,
    adaln_mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
    cross_dim: usize,
    #[serde(default = "default_mlp_ratio")]
    mlp_ratio: f64,
}

fn default_mlp_ratio() -> f64 {
    4.0
}

impl Serialize for DiTConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (mode, rank) = match self.adaln_mode {
            AdalnMode::Full => ("full".to_string(), None),
            AdalnMode::Lora { rank } => ("lora".to_string(), Some(rank)),
        };
        DiTConfigWire {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            adaln_mode: mode,
            rank,
            cross_dim: self.cross_dim,
            mlp_ratio: self.mlp_ratio,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiTConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = DiTConfigWire::deserialize(d)?;
        let adaln_mode = match wire.adaln_mode.as_str() {
            "full" => AdalnMode::Full,
            "lora" => AdalnMode::Lora {
                rank: wire.rank.ok_or_else(|| {
                    serde::de::Error::custom("adaln_mode \"lora\" requires key `rank`")
                })?,
            },
            other => {
                return Err(serde::de::Error::custom(format!(
                    "adaln_mode must be \"full\" or \"lora\", got {other:?}"
                )))
            }
        };
        let cfg = Self {
            layers: wire.layers,
            hidden: wire.hidden,
            heads: wire.heads,
            adaln_mode,
            cross_dim: wire.cross_dim,
            mlp_ratio: wire.mlp_ratio,
        };
        cfg.validate().map_err(serde::de::Error::custom)?;
        Ok(cfg)
    }
}

impl DiTConfig {
    pub fn validate(&self) -> Result<(), DitError> {
        if self.layers == 0 {
            return Err(DitError::InvalidConfig("layers must be >= 1".into()));
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(DitError::InvalidConfig(format!(
                "heads ({}) must divide hidden ({})",
                self.heads, self.hidden
            )));
        }
        if self.cross_dim == 0 {
            return Err(DitError::InvalidConfig("cross_dim must be >= 1".into()));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(DitError::InvalidConfig("mlp_ratio must be > 0".into()));
        }
        if let AdalnMode::Lora { rank } = self.adaln_mode {
            if rank == 0 || rank >= 9 * self.hidden {
                return Err(DitError::InvalidConfig(format!(
                    "lora rank {} must be in 1..{}",
                    rank,
                    9 * self.hidden
                )));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// MLP inner width, `round(mlp_ratio * hidden)`.
    pub fn mlp_width(&self) -> usize {
        (self.mlp_ratio * self.hidden as f64).round() as usize
    }
}

/// Temporal/spatial patch extents for the 3D patchify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub pt: usize,
    pub ph: usize,
    pub pw: usize,
}

impl PatchSpec {
    pub fn volume(&self) -> usize {
        self.pt * self.ph * self.pw
    }
}

/// Conditioning signals fed to every block: the noise level, the text
/// embedding consumed by cross-attention, and any extra named embeddings
/// (modeled for pipeline-conditioning accounting, not consumed by the toy
/// block itself).
#[derive(Debug, Clone)]
pub struct ConditioningSet {
    pub sigma: f64,
    pub text: DenseTensor,
    pub extras: Vec<(String, DenseTensor)>,
}

impl ConditioningSet {
    pub fn new(sigma: f64, text: DenseTensor) -> Self {
        Self { sigma, text, extras: Vec::new() }
    }

    pub fn validate(&self, cross_dim: usize) -> Result<(), DitError> {
        if self.text.rank() != 2 || self.text.shape()[1] != cross_dim {
            return Err(DitError::Conditioning(format!(
                "text embedding must be [s_text, {cross_dim}], got {:?}",
                self.text.shape()
            )));
        }
        Ok(())
    }

    /// Bytes communicated per microbatch when conditioning rides alongside
    /// hidden states across pipeline stages: text plus extras, f64 elements.
    pub fn wire_bytes(&self) -> u64 {
        let extra: usize = self.extras.iter().map(|(_, t)| t.numel()).sum();
        ((self.text.numel() + extra) * 8) as u64
    }
}
