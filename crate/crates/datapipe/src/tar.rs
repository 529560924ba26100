//! Hand-rolled POSIX ustar archives. The writer never splits a sample
//! across shards; the reader is a single forward pass with no `Seek`
//! bound at all, so backward seeks are impossible by construction.

use crate::sample::{
    decode_embedding, encode_embedding, DatapipeError, Sample, SampleMeta,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

const BLOCK: usize = 512;

/// Metadata of one written shard: ordered members and a name -> header
/// offset index.
#[derive(Debug, Clone)]
pub struct ShardInfo {
    pub path: PathBuf,
    pub entries: Vec<(String, u64)>,
    pub index: BTreeMap<String, u64>,
    pub samples: usize,
    pub bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestShard {
    pub path: String,
    pub samples: usize,
    pub bytes: u64,
}

/// Dataset manifest listing shard files in stream order.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub shards: Vec<ManifestShard>,
}

fn octal_field(value: u64, width: usize) -> Vec<u8> {
    let mut s = format!("{value:0>width$o}", width = width - 1).into_bytes();
    s.push(0);
    s
}

fn ustar_header(name: &str, size: u64) -> Result<[u8; BLOCK], DatapipeError> {
    if name.len() > 100 {
        return Err(DatapipeError::InvalidSample(format!("member name too long: {name}")));
    }
    let mut h = [0u8; BLOCK];
    h[..name.len()].copy_from_slice(name.as_bytes());
    h[100..108].copy_from_slice(&octal_field(0o644, 8));
    h[108..116].copy_from_slice(&octal_field(0, 8));
    h[116..124].copy_from_slice(&octal_field(0, 8));
    h[124..136].copy_from_slice(&octal_field(size, 12));
    h[136..148].copy_from_slice(&octal_field(0, 12));
    h[148..156].fill(b' '); // checksum placeholder
    h[156] = b'0'; // regular file
    h[257..263].copy_from_slice(b"ustar\0");
    h[263..265].copy_from_slice(b"00");
    h[329..337].copy_from_slice(&octal_field(0, 8));
    h[337..345].copy_from_slice(&octal_field(0, 8));
    let checksum: u64 = h.iter().map(|&b| b as u64).sum();
    let mut chk = format!("{checksum:06o}").into_bytes();
    chk.push(0);
    chk.push(b' ');
    h[148..156].copy_from_slice(&chk);
    Ok(h)
}

fn padded_len(size: u64) -> u64 {
    size.div_ceil(BLOCK as u64) * BLOCK as u64
}

/// Members of a sample, in write order: metadata, payload, embedding.
fn sample_members(s: &Sample) -> Result<Vec<(String, Vec<u8>)>, DatapipeError> {
    let mut members = vec![
        (
            format!("{}.json", s.id),
            serde_json::to_vec(&SampleMeta::of(s))?,
        ),
        (format!("{}.bin", s.id), s.payload.clone()),
    ];
    if let Some(e) = &s.caption_embedding {
        members.push((format!("{}.emb", s.id), encode_embedding(e)));
    }
    Ok(members)
}

fn sample_archived_bytes(members: &[(String, Vec<u8>)]) -> u64 {
    members
        .iter()
        .map(|(_, data)| BLOCK as u64 + padded_len(data.len() as u64))
        .sum()
}

/// Writes samples into ustar shards of at most `max_shard_bytes` of member
/// content (the two end-of-archive blocks are excluded from the cap).
/// Samples are never split across shards; shard order equals input order.
pub fn write_shards(
    samples: &[Sample],
    max_shard_bytes: u64,
    dir: &Path,
) -> Result<Vec<ShardInfo>, DatapipeError> {
    if samples.is_empty() {
        return Err(DatapipeError::InvalidSample("no samples to shard".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut shards: Vec<ShardInfo> = Vec::new();

    let mut current: Vec<u8> = Vec::new();
    let mut entries: Vec<(String, u64)> = Vec::new();
    let mut count = 0usize;

    let flush = |buf: &mut Vec<u8>,
                 entries: &mut Vec<(String, u64)>,
                 count: &mut usize,
                 shards: &mut Vec<ShardInfo>|
     -> Result<(), DatapipeError> {
        if buf.is_empty() {
            return Ok(());
        }
        buf.extend_from_slice(&[0u8; 2 * BLOCK]); // end-of-archive marker
        let path = dir.join(format!("shard-{:06}.tar", shards.len()));
        let mut f = File::create(&path)?;
        f.write_all(buf)?;
        let index = entries.iter().cloned().collect();
        shards.push(ShardInfo {
            path,
            entries: std::mem::take(entries),
            index,
            samples: *count,
            bytes: buf.len() as u64,
        });
        buf.clear();
        *count = 0;
        Ok(())
    };

    for s in samples {
        let members = sample_members(s)?;
        let need = sample_archived_bytes(&members);
        if need > max_shard_bytes {
            return Err(DatapipeError::OversizeSample {
                id: s.id.clone(),
                bytes: need,
                max: max_shard_bytes,
            });
        }
        if current.len() as u64 + need > max_shard_bytes {
            flush(&mut current, &mut entries, &mut count, &mut shards)?;
        }
        for (name, data) in members {
            entries.push((name.clone(), current.len() as u64));
            current.extend_from_slice(&ustar_header(&name, data.len() as u64)?);
            current.extend_from_slice(&data);
            let pad = padded_len(data.len() as u64) as usize - data.len();
            current.extend(std::iter::repeat_n(0u8, pad));
        }
        count += 1;
    }
    flush(&mut current, &mut entries, &mut count, &mut shards)?;
    Ok(shards)
}

pub fn write_manifest(shards: &[ShardInfo], path: &Path) -> Result<(), DatapipeError> {
    let manifest = DatasetManifest {
        shards: shards
            .iter()
            .map(|s| ManifestShard {
                path: s.path.to_string_lossy().into_owned(),
                samples: s.samples,
                bytes: s.bytes,
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Streaming tar member reader over any `Read`. Only forward reads are
/// possible; every member's header offset is logged so tests can assert
/// the monotone access pattern.
pub struct TarMemberReader<R: Read> {
    inner: R,
    offset: u64,
    log: Vec<u64>,
}

impl<R: Read> TarMemberReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0, log: Vec::new() }
    }

    pub fn offset_log(&self) -> &[u64] {
        &self.log
    }

    fn read_exact_counted(&mut self, buf: &mut [u8]) -> Result<(), DatapipeError> {
        self.inner.read_exact(buf)?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Next `(member name, bytes)`, or `None` at end of archive.
    pub fn next_member(&mut self) -> Result<Option<(String, Vec<u8>)>, DatapipeError> {
        let header_offset = self.offset;
        let mut header = [0u8; BLOCK];
        self.read_exact_counted(&mut header)?;
        if header.iter().all(|&b| b == 0) {
            // first zero block: expect the second, then end
            let mut second = [0u8; BLOCK];
            self.read_exact_counted(&mut second)?;
            if second.iter().all(|&b| b == 0) {
                return Ok(None);
            }
            return Err(DatapipeError::CorruptHeader {
                offset: header_offset,
                reason: "lone zero block".into(),
            });
        }
        if &header[257..262] != b"ustar" {
            return Err(DatapipeError::CorruptHeader {
                offset: header_offset,
                reason: "missing ustar magic".into(),
            });
        }
        let stored: u64 = std::str::from_utf8(&header[148..156])
            .ok()
            .and_then(|s| u64::from_str_radix(s.trim_matches([' ', '\0']), 8).ok())
            .ok_or_else(|| DatapipeError::CorruptHeader {
                offset: header_offset,
                reason: "unparseable checksum".into(),
            })?;
        let mut sum: u64 = header.iter().map(|&b| b as u64).sum();
        for &b in &header[148..156] {
            sum = sum - b as u64 + b' ' as u64;
        }
        if sum != stored {
            return Err(DatapipeError::CorruptHeader {
                offset: header_offset,
                reason: format!("checksum {sum:o} != stored {stored:o}"),
            });
        }
        let name_end = header[..100].iter().position(|&b| b == 0).unwrap_or(100);
        let name = std::str::from_utf8(&header[..name_end])
            .map_err(|_| DatapipeError::CorruptHeader {
                offset: header_offset,
                reason: "non-utf8 member name".into(),
            })?
            .to_string();
        let size = std::str::from_utf8(&header[124..136])
            .ok()
            .and_then(|s| u64::from_str_radix(s.trim_matches([' ', '\0']), 8).ok())
            .ok_or_else(|| DatapipeError::CorruptHeader {
                offset: header_offset,
                reason: "unparseable size".into(),
            })?;
        self.log.push(header_offset);
        let mut data = vec![0u8; padded_len(size) as usize];
        self.read_exact_counted(&mut data)?;
        data.truncate(size as usize);
        Ok(Some((name, data)))
    }
}

fn group_to_sample(
    basename: &str,
    members: &BTreeMap<String, Vec<u8>>,
) -> Result<Sample, DatapipeError> {
    let meta_bytes = members.get("json").ok_or_else(|| DatapipeError::DanglingGroup {
        basename: basename.to_string(),
        reason: "missing .json metadata member".into(),
    })?;
    let meta: SampleMeta = serde_json::from_slice(meta_bytes)?;
    let payload = members.get("bin").ok_or_else(|| DatapipeError::DanglingGroup {
        basename: basename.to_string(),
        reason: "missing .bin payload member".into(),
    })?;
    if meta.id != basename {
        return Err(DatapipeError::DanglingGroup {
            basename: basename.to_string(),
            reason: format!("metadata id {} does not match member basename", meta.id),
        });
    }
    let caption_embedding = members.get("emb").map(|b| decode_embedding(b)).transpose()?;
    Ok(Sample {
        id: meta.id,
        modality: meta.modality,
        t: meta.t,
        h: meta.h,
        w: meta.w,
        token_len: meta.token_len,
        payload: payload.clone(),
        caption_embedding,
    })
}

fn split_name(name: &str) -> Result<(&str, &str), DatapipeError> {
    name.rsplit_once('.').ok_or_else(|| DatapipeError::DanglingGroup {
        basename: name.to_string(),
        reason: "member name has no extension".into(),
    })
}

/// Drains a member reader into samples, grouping consecutive members that
/// share a basename.
pub(crate) fn collect_samples<R: Read>(
    reader: &mut TarMemberReader<R>,
    samples: &mut Vec<Sample>,
) -> Result<(), DatapipeError> {
    let mut current: Option<(String, BTreeMap<String, Vec<u8>>)> = None;
    while let Some((name, data)) = reader.next_member()? {
        let (stem, ext) = split_name(&name)?;
        match &mut current {
            Some((basename, members)) if basename == stem => {
                members.insert(ext.to_string(), data);
            }
            _ => {
                if let Some((basename, members)) = current.take() {
                    samples.push(group_to_sample(&basename, &members)?);
                }
                let mut members = BTreeMap::new();
                members.insert(ext.to_string(), data);
                current = Some((stem.to_string(), members));
            }
        }
    }
    if let Some((basename, members)) = current.take() {
        samples.push(group_to_sample(&basename, &members)?);
    }
    Ok(())
}

/// Reads samples from shard files in order, one forward pass per file.
pub fn read_shards(paths: &[PathBuf]) -> Result<Vec<Sample>, DatapipeError> {
    let mut samples = Vec::new();
    for path in paths {
        let mut reader = TarMemberReader::new(BufReader::new(File::open(path)?));
        collect_samples(&mut reader, &mut samples)?;
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Modality;
    use vdt_dit::PatchSpec;
    use vdt_numerics::{DenseTensor, SeededRng};

    fn make_samples(n: usize, seed: u64) -> Vec<Sample> {
        let patch = PatchSpec { pt: 1, ph: 2, pw: 2 };
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|i| {
                let payload: Vec<u8> =
                    (0..(16 + rng.uniform_usize(64))).map(|_| rng.next_u64() as u8).collect();
                let mut s = Sample::new(
                    format!("sample-{i:04}"),
                    if i % 3 == 0 { Modality::Image } else { Modality::Video },
                    [if i % 3 == 0 { 1 } else { 4 }, 4, 8],
                    payload,
                    &patch,
                )
                .unwrap();
                if i % 2 == 0 {
                    s = s.with_embedding(DenseTensor::randn(&[2, 3], &mut rng));
                }
                s
            })
            .collect()
    }

    #[test]
    fn single_sample_one_shard() {
        let dir = tempfile::tempdir().unwrap();
        let samples = make_samples(1, 1);
        let shards = write_shards(&samples, 1 << 20, dir.path()).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].samples, 1);
        // members contiguous and indexed
        assert!(shards[0].index.contains_key("sample-0000.json"));
        assert!(shards[0].index.contains_key("sample-0000.bin"));
    }

    #[test]
    fn roundtrip_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let samples = make_samples(13, 2);
        let shards = write_shards(&samples, 4096, dir.path()).unwrap();
        assert!(shards.len() > 1, "expect multiple shards at this cap");
        let paths: Vec<PathBuf> = shards.iter().map(|s| s.path.clone()).collect();
        let back = read_shards(&paths).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn sample_never_split_across_shards() {
        let dir = tempfile::tempdir().unwrap();
        let samples = make_samples(9, 3);
        let shards = write_shards(&samples, 6144, dir.path()).unwrap();
        assert!(shards.len() > 1);
        let mut seen_stems: Vec<String> = Vec::new();
        for shard in &shards {
            let stems: Vec<String> = shard
                .entries
                .iter()
                .map(|(n, _)| n.rsplit_once('.').unwrap().0.to_string())
                .collect();
            for (i, stem) in stems.iter().enumerate() {
                // a stem's members form one contiguous run in one shard
                let first = stems.iter().position(|s| s == stem).unwrap();
                let last = stems.iter().rposition(|s| s == stem).unwrap();
                assert!(stems[first..=last].iter().all(|s| s == stem), "stem {stem} split at {i}");
                assert!(!seen_stems.contains(stem), "stem {stem} appears in two shards");
            }
            seen_stems.extend(stems.into_iter().collect::<std::collections::BTreeSet<_>>());
        }
        // reading across shard boundaries preserves order
        let paths: Vec<PathBuf> = shards.iter().map(|s| s.path.clone()).collect();
        let back = read_shards(&paths).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn oversize_sample_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let patch = PatchSpec { pt: 1, ph: 1, pw: 1 };
        let big = Sample::new("big", Modality::Image, [1, 2, 2], vec![0u8; 8192], &patch).unwrap();
        assert!(matches!(
            write_shards(&[big], 4096, dir.path()),
            Err(DatapipeError::OversizeSample { .. })
        ));
    }

    #[test]
    fn external_tar_lists_same_members_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let samples = make_samples(5, 4);
        let shards = write_shards(&samples, 1 << 20, dir.path()).unwrap();
        let ours: Vec<String> = shards[0].entries.iter().map(|(n, _)| n.clone()).collect();
        let out = std::process::Command::new("tar")
            .arg("-tf")
            .arg(&shards[0].path)
            .output()
            .expect("system tar available");
        assert!(out.status.success(), "tar -tf failed: {:?}", out);
        let theirs: Vec<String> =
            String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
        assert_eq!(ours, theirs);
    }

    #[test]
    fn reader_offsets_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let samples = make_samples(7, 5);
        let shards = write_shards(&samples, 1 << 20, dir.path()).unwrap();
        let mut reader =
            TarMemberReader::new(BufReader::new(File::open(&shards[0].path).unwrap()));
        while reader.next_member().unwrap().is_some() {}
        let log = reader.offset_log();
        assert!(!log.is_empty());
        assert!(log.windows(2).all(|w| w[0] < w[1]), "offsets must advance: {log:?}");
        // offsets match the writer's index
        for ((name, written_at), read_at) in shards[0].entries.iter().zip(log) {
            assert_eq!(written_at, read_at, "member {name}");
        }
    }

    #[test]
    fn empty_path_list_empty_stream() {
        assert_eq!(read_shards(&[]).unwrap(), vec![]);
    }

    #[test]
    fn corrupt_header_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let samples = make_samples(2, 6);
        let shards = write_shards(&samples, 1 << 20, dir.path()).unwrap();
        let mut bytes = std::fs::read(&shards[0].path).unwrap();
        // smash the magic of the second member's header
        let second_offset = shards[0].entries[1].1 as usize;
        bytes[second_offset + 257] = b'X';
        let corrupted = dir.path().join("bad.tar");
        std::fs::write(&corrupted, &bytes).unwrap();
        match read_shards(&[corrupted]) {
            Err(DatapipeError::CorruptHeader { offset, .. }) => {
                assert_eq!(offset, second_offset as u64)
            }
            other => panic!("expected CorruptHeader, got {other:?}"),
        }
    }

    #[test]
    fn dangling_group_named() {
        let dir = tempfile::tempdir().unwrap();
        // hand-build a tar with a payload member but no metadata
        let mut buf = Vec::new();
        let data = b"payload".to_vec();
        buf.extend_from_slice(&ustar_header("orphan.bin", data.len() as u64).unwrap());
        buf.extend_from_slice(&data);
        buf.extend(std::iter::repeat_n(0u8, padded_len(data.len() as u64) as usize - data.len()));
        buf.extend_from_slice(&[0u8; 2 * BLOCK]);
        let path = dir.path().join("orphan.tar");
        std::fs::write(&path, &buf).unwrap();
        match read_shards(&[path]) {
            Err(DatapipeError::DanglingGroup { basename, .. }) => assert_eq!(basename, "orphan"),
            other => panic!("expected DanglingGroup, got {other:?}"),
        }
    }
}
