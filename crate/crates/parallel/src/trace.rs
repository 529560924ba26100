use crate::grid::MeshAxis;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    AllGather,
    ReduceScatter,
    AllToAll,
    P2p,
    AllReduce,
}

/// One collective event. `bytes` counts the participating tensor's elements
/// times 8 (f64), the convention shared with the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveRecord {
    pub step: u64,
    pub kind: CollectiveKind,
    pub axis: MeshAxis,
    pub bytes: u64,
    pub participants: usize,
}

/// Append-only log of every simulated collective.
#[derive(Debug, Default, Clone)]
pub struct CollectiveTrace {
    records: Vec<CollectiveRecord>,
    current_step: u64,
}

impl CollectiveTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tags subsequent records with a step index (denoising or training step).
    pub fn begin_step(&mut self, step: u64) {
        self.current_step = step;
    }

    pub fn record(&mut self, kind: CollectiveKind, axis: MeshAxis, bytes: u64, participants: usize) {
        self.records.push(CollectiveRecord {
            step: self.current_step,
            kind,
            axis,
            bytes,
            participants,
        });
    }

    pub fn records(&self) -> &[CollectiveRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: CollectiveKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    pub fn bytes(&self, kind: CollectiveKind) -> u64 {
        self.records.iter().filter(|r| r.kind == kind).map(|r| r.bytes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.bytes).sum()
    }

    /// One JSON object per line: kind, axis, bytes, step, participants.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_one_line_per_record() {
        let mut t = CollectiveTrace::new();
        t.begin_step(3);
        t.record(CollectiveKind::AllGather, MeshAxis::Cp, 1024, 4);
        t.record(CollectiveKind::P2p, MeshAxis::Pp, 64, 2);
        let jsonl = t.to_jsonl();
        let lines: Vec<&str> = jsonl.trim_end().split('\n').collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"all_gather\""));
        assert!(lines[0].contains("\"step\":3"));
        assert!(lines[1].contains("\"p2p\""));
    }

    #[test]
    fn counters_filter_by_kind() {
        let mut t = CollectiveTrace::new();
        t.record(CollectiveKind::AllToAll, MeshAxis::Cp, 10, 2);
        t.record(CollectiveKind::AllToAll, MeshAxis::Cp, 20, 2);
        t.record(CollectiveKind::AllReduce, MeshAxis::Tp, 5, 2);
        assert_eq!(t.count(CollectiveKind::AllToAll), 2);
        assert_eq!(t.bytes(CollectiveKind::AllToAll), 30);
        assert_eq!(t.total_bytes(), 35);
    }
}
