use crate::sample::{DatapipeError, Sample};
use std::collections::VecDeque;
use vdt_numerics::AttnMask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackSegment {
    pub id: String,
    pub start: usize,
    pub len: usize,
}

/// One packed micro batch: contiguous non-overlapping segments plus
/// trailing padding up to `max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub segments: Vec<PackSegment>,
    pub total_len: usize,
    pub pad_len: usize,
    pub max_len: usize,
}

impl PackedSequence {
    pub fn mask_blocks(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.len).collect()
    }

    fn validate(&self) {
        debug_assert_eq!(self.total_len + self.pad_len, self.max_len);
        let mut cursor = 0;
        for seg in &self.segments {
            debug_assert_eq!(seg.start, cursor);
            cursor += seg.len;
        }
        debug_assert_eq!(cursor, self.total_len);
    }
}

/// First-fit-decreasing packing within a sliding buffer: the buffer holds
/// up to `buffer_size` pending samples; each emitted pack greedily fills
/// from the buffer's length-descending order (ties keep arrival order).
/// One pack is one micro batch.
pub fn pack_sequences(
    stream: &[Sample],
    max_len: usize,
    buffer_size: usize,
) -> Result<Vec<PackedSequence>, DatapipeError> {
    if buffer_size == 0 {
        return Err(DatapipeError::InvalidSample("buffer_size must be >= 1".into()));
    }
    for s in stream {
        if s.token_len > max_len {
            return Err(DatapipeError::SampleTooLong {
                id: s.id.clone(),
                token_len: s.token_len,
                max_len,
            });
        }
        if s.token_len == 0 {
            return Err(DatapipeError::InvalidSample(format!("sample {} has no tokens", s.id)));
        }
    }

    // (arrival index, id, token_len)
    let mut pending: VecDeque<(usize, &Sample)> = VecDeque::new();
    let mut feed = stream.iter().enumerate();
    let mut packs = Vec::new();

    loop {
        while pending.len() < buffer_size {
            match feed.next() {
                Some((i, s)) => pending.push_back((i, s)),
                None => break,
            }
        }
        if pending.is_empty() {
            break;
        }
        // length-descending view of the buffer, arrival order for ties
        let mut order: Vec<usize> = (0..pending.len()).collect();
        order.sort_by(|&a, &b| {
            pending[b]
                .1
                .token_len
                .cmp(&pending[a].1.token_len)
                .then(pending[a].0.cmp(&pending[b].0))
        });
        let mut chosen: Vec<usize> = Vec::new();
        let mut used = 0;
        for idx in order {
            let len = pending[idx].1.token_len;
            if used + len <= max_len {
                chosen.push(idx);
                used += len;
            }
        }
        chosen.sort_unstable();
        let mut segments = Vec::with_capacity(chosen.len());
        let mut cursor = 0;
        // segments keep the FFD pick order (longest first)
        let mut picks: Vec<(usize, &Sample)> = chosen.iter().map(|&i| pending[i]).collect();
        picks.sort_by(|a, b| b.1.token_len.cmp(&a.1.token_len).then(a.0.cmp(&b.0)));
        for (_, s) in &picks {
            segments.push(PackSegment { id: s.id.clone(), start: cursor, len: s.token_len });
            cursor += s.token_len;
        }
        for idx in chosen.into_iter().rev() {
            pending.remove(idx);
        }
        let pack = PackedSequence {
            segments,
            total_len: cursor,
            pad_len: max_len - cursor,
            max_len,
        };
        pack.validate();
        packs.push(pack);
    }
    Ok(packs)
}

/// Block-diagonal boolean mask for a pack: true exactly inside each
/// segment's diagonal block; padding rows and columns stay false, so
/// padded positions attend to nothing and produce zero attention rows.
pub fn build_packed_mask(pack: &PackedSequence) -> AttnMask {
    AttnMask::block_diagonal(pack.max_len, &pack.mask_blocks())
}
