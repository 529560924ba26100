use serde::{Deserialize, Serialize};
use thiserror::Error;
use vdt_dit::PatchSpec;
use vdt_numerics::{DenseTensor, NumericsError};

#[derive(Debug, Error)]
pub enum DatapipeError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("sample {id} ({bytes} bytes) exceeds max shard size {max}")]
    OversizeSample { id: String, bytes: u64, max: u64 },
    #[error("corrupt tar header at offset {offset}: {reason}")]
    CorruptHeader { offset: u64, reason: String },
    #[error("dangling member group for basename {basename}: {reason}")]
    DanglingGroup { basename: String, reason: String },
    #[error("sample {id} token length {token_len} exceeds pack capacity {max_len}")]
    SampleTooLong { id: String, token_len: usize, max_len: usize },
    #[error("blend error: {0}")]
    Blend(String),
    #[error("dedup requires at least one shard")]
    NoShards,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Video,
}

/// One training sample: a latent extent descriptor plus its encoded
/// payload and an optional caption embedding. Images are t = 1 videos.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub modality: Modality,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub token_len: usize,
    pub payload: Vec<u8>,
    pub caption_embedding: Option<DenseTensor>,
}

impl Sample {
    /// Builds a sample, deriving `token_len` from the active patch spec.
    pub fn new(
        id: impl Into<String>,
        modality: Modality,
        extents: [usize; 3],
        payload: Vec<u8>,
        patch: &PatchSpec,
    ) -> Result<Self, DatapipeError> {
        let id = id.into();
        if id.is_empty() || id.contains(['/', '.']) || id.len() > 80 {
            return Err(DatapipeError::InvalidSample(format!(
                "id {id:?} must be non-empty, at most 80 chars, without '/' or '.'"
            )));
        }
        let [t, h, w] = extents;
        if modality == Modality::Image && t != 1 {
            return Err(DatapipeError::InvalidSample(format!(
                "image sample {id} must have t = 1, got {t}"
            )));
        }
        for (axis, extent, p) in [("t", t, patch.pt), ("h", h, patch.ph), ("w", w, patch.pw)] {
            if extent == 0 || extent % p != 0 {
                return Err(DatapipeError::InvalidSample(format!(
                    "sample {id}: extent {axis}={extent} not divisible by patch {p}"
                )));
            }
        }
        let token_len = (t / patch.pt) * (h / patch.ph) * (w / patch.pw);
        Ok(Self { id, modality, t, h, w, token_len, payload, caption_embedding: None })
    }

    pub fn with_embedding(mut self, embedding: DenseTensor) -> Self {
        self.caption_embedding = Some(embedding);
        self
    }
}

/// The `<id>.json` member contents.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SampleMeta {
    pub id: String,
    pub modality: Modality,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub token_len: usize,
}

impl SampleMeta {
    pub fn of(s: &Sample) -> Self {
        Self {
            id: s.id.clone(),
            modality: s.modality,
            t: s.t,
            h: s.h,
            w: s.w,
            token_len: s.token_len,
        }
    }
}

/// Binary embedding member layout: u64 rank, u64 extents, f64 data, all LE.
pub(crate) fn encode_embedding(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + t.shape().len() * 8 + t.numel() * 8);
    out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_embedding(bytes: &[u8]) -> Result<DenseTensor, DatapipeError> {
    let take_u64 = |b: &[u8], at: usize| -> Result<u64, DatapipeError> {
        b.get(at..at + 8)
            .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
            .ok_or_else(|| DatapipeError::InvalidSample("truncated embedding member".into()))
    };
    let rank = take_u64(bytes, 0)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(take_u64(bytes, 8 + i * 8)? as usize);
    }
    let numel: usize = shape.iter().product();
    let data_at = 8 + rank * 8;
    if bytes.len() != data_at + numel * 8 {
        return Err(DatapipeError::InvalidSample("embedding member length mismatch".into()));
    }
    let data = (0..numel)
        .map(|i| {
            f64::from_le_bytes(bytes[data_at + i * 8..data_at + (i + 1) * 8].try_into().unwrap())
        })
        .collect();
    Ok(DenseTensor::new(shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vdt_numerics::SeededRng;

    #[test]
    fn token_len_derived_from_patch_spec() {
        let patch = PatchSpec { pt: 2, ph: 4, pw: 4 };
        let s = Sample::new("clip0", Modality::Video, [4, 8, 16], vec![1, 2, 3], &patch).unwrap();
        assert_eq!(s.token_len, 2 * 2 * 4);
    }

    #[test]
    fn image_requires_unit_t() {
        let patch = PatchSpec { pt: 1, ph: 1, pw: 1 };
        assert!(Sample::new("img", Modality::Image, [2, 4, 4], vec![], &patch).is_err());
    }

    #[test]
    fn id_charset_enforced() {
        let patch = PatchSpec { pt: 1, ph: 1, pw: 1 };
        assert!(Sample::new("a.b", Modality::Image, [1, 1, 1], vec![], &patch).is_err());
        assert!(Sample::new("a/b", Modality::Image, [1, 1, 1], vec![], &patch).is_err());
        assert!(Sample::new("", Modality::Image, [1, 1, 1], vec![], &patch).is_err());
    }

    #[test]
    fn embedding_roundtrip() {
        let mut rng = SeededRng::new(1);
        let e = DenseTensor::randn(&[3, 4], &mut rng);
        let back = decode_embedding(&encode_embedding(&e)).unwrap();
        assert_eq!(back, e);
    }
}
