use crate::sample::{DatapipeError, Sample};
use crate::tar::TarMemberReader;
use std::io::Cursor;
use std::path::PathBuf;

/// How ranks acquire shards from origin storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionMode {
    /// Every shard is downloaded by exactly one rank (round-robin), then an
    /// all-gather replicates the raw shard bytes to the other ranks.
    Dedup,
    /// Every rank downloads every shard; no all-gather.
    Naive,
}

/// Per-rank byte accounting for one epoch of shard acquisition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownloadLedger {
    /// Bytes pulled from origin storage by each rank.
    pub origin_bytes: Vec<u64>,
    /// Bytes received from peers in the all-gather by each rank.
    pub allgather_bytes: Vec<u64>,
}

impl DownloadLedger {
    pub fn total_origin(&self) -> u64 {
        self.origin_bytes.iter().sum()
    }
}

/// Assigns shards round-robin to ranks, simulates the all-gather that
/// replicates raw shard bytes, and decodes every rank's stream in global
/// shard order. All ranks end with identical ordered sample streams.
pub fn dedup_assign_and_distribute(
    shard_paths: &[PathBuf],
    n_ranks: usize,
    mode: DistributionMode,
) -> Result<(Vec<Vec<Sample>>, DownloadLedger), DatapipeError> {
    if shard_paths.is_empty() {
        return Err(DatapipeError::NoShards);
    }
    if n_ranks == 0 {
        return Err(DatapipeError::InvalidSample("n_ranks must be >= 1".into()));
    }
    let shard_bytes: Vec<Vec<u8>> =
        shard_paths.iter().map(std::fs::read).collect::<Result<_, _>>()?;
    let sizes: Vec<u64> = shard_bytes.iter().map(|b| b.len() as u64).collect();
    let total: u64 = sizes.iter().sum();

    let mut origin_bytes = vec![0u64; n_ranks];
    let mut allgather_bytes = vec![0u64; n_ranks];
    match mode {
        DistributionMode::Dedup => {
            for (i, &size) in sizes.iter().enumerate() {
                origin_bytes[i % n_ranks] += size;
            }
            for rank in 0..n_ranks {
                // the all-gather delivers every shard this rank did not fetch
                allgather_bytes[rank] = total - origin_bytes[rank];
            }
        }
        DistributionMode::Naive => {
            for rank in 0..n_ranks {
                origin_bytes[rank] = total;
            }
        }
    }

    // every rank decodes its own replicated copy of the full shard list,
    // in global shard order
    let mut per_rank = Vec::with_capacity(n_ranks);
    for _rank in 0..n_ranks {
        let mut samples = Vec::new();
        for bytes in &shard_bytes {
            let mut reader = TarMemberReader::new(Cursor::new(bytes));
            crate::tar::collect_samples(&mut reader, &mut samples)?;
        }
        per_rank.push(samples);
    }
    Ok((per_rank, DownloadLedger { origin_bytes, allgather_bytes }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Modality;
    use crate::tar::write_shards;
    use vdt_dit::PatchSpec;

    fn build_dataset(n_samples: usize, max_shard: u64) -> (tempfile::TempDir, Vec<PathBuf>) {
        let dir = tempfile::tempdir().unwrap();
        let patch = PatchSpec { pt: 1, ph: 1, pw: 1 };
        let samples: Vec<Sample> = (0..n_samples)
            .map(|i| {
                Sample::new(
                    format!("s{i:04}"),
                    Modality::Image,
                    [1, 2, 2],
                    vec![i as u8; 100 + i],
                    &patch,
                )
                .unwrap()
            })
            .collect();
        let shards = write_shards(&samples, max_shard, dir.path()).unwrap();
        let paths = shards.iter().map(|s| s.path.clone()).collect();
        (dir, paths)
    }

    #[test]
    fn single_rank_matches_baseline_with_zero_allgather() {
        let (_dir, paths) = build_dataset(6, 2048);
        let (streams, ledger) =
            dedup_assign_and_distribute(&paths, 1, DistributionMode::Dedup).unwrap();
        let baseline = crate::tar::read_shards(&paths).unwrap();
        assert_eq!(streams[0], baseline);
        assert_eq!(ledger.allgather_bytes, vec![0]);
        let total: u64 = paths.iter().map(|p| std::fs::metadata(p).unwrap().len()).sum();
        assert_eq!(ledger.origin_bytes, vec![total]);
    }

    #[test]
    fn eight_shards_four_ranks_two_each() {
        // each sample archives to 2048 bytes (json + bin member blocks)
        let (_dir, paths) = build_dataset(16, 4096);
        assert_eq!(paths.len(), 8, "sizing should produce 8 shards, got {}", paths.len());
        let (streams, ledger) =
            dedup_assign_and_distribute(&paths, 4, DistributionMode::Dedup).unwrap();
        let baseline = crate::tar::read_shards(&paths).unwrap();
        for (rank, stream) in streams.iter().enumerate() {
            assert_eq!(stream, &baseline, "rank {rank} stream differs");
        }
        // each rank fetched exactly two shards from origin
        for rank in 0..4 {
            let expected: u64 = paths
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 4 == rank)
                .map(|(_, p)| std::fs::metadata(p).unwrap().len())
                .sum();
            assert_eq!(ledger.origin_bytes[rank], expected);
        }
    }

    #[test]
    fn dedup_origin_total_is_dataset_size_naive_is_nx() {
        let (_dir, paths) = build_dataset(10, 2048);
        let total: u64 = paths.iter().map(|p| std::fs::metadata(p).unwrap().len()).sum();
        let (_, dedup) = dedup_assign_and_distribute(&paths, 4, DistributionMode::Dedup).unwrap();
        assert_eq!(dedup.total_origin(), total);
        let (_, naive) = dedup_assign_and_distribute(&paths, 4, DistributionMode::Naive).unwrap();
        assert_eq!(naive.total_origin(), 4 * total);
        assert_eq!(naive.allgather_bytes, vec![0; 4]);
    }

    #[test]
    fn zero_shards_error() {
        assert!(matches!(
            dedup_assign_and_distribute(&[], 2, DistributionMode::Dedup),
            Err(DatapipeError::NoShards)
        ));
    }
}
