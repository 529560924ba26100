use crate::sample::{DatapipeError, Sample};
use vdt_numerics::SeededRng;

/// Weighted multi-source blend specification. Weights are normalized to 1.
#[derive(Debug, Clone)]
pub struct BlendSpec {
    pub weights: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExhaustionPolicy {
    /// Stop the stream when the next scheduled source is empty.
    Stop,
    /// Treat an empty scheduled source as an error.
    Error,
}

/// Deterministic weighted interleave: at every step the source with the
/// largest deficit (target share minus emitted share) goes next; ties fall
/// to the least-recently-emitted source, and initial ties are broken by a
/// seeded priority shuffle. Long-run source fractions converge to the
/// weights (the deficit rule keeps every source within one item of its
/// target count).
pub fn blend(
    sources: Vec<Vec<Sample>>,
    spec: &BlendSpec,
    policy: ExhaustionPolicy,
) -> Result<Vec<Sample>, DatapipeError> {
    if sources.len() != spec.weights.len() {
        return Err(DatapipeError::Blend(format!(
            "{} sources but {} weights",
            sources.len(),
            spec.weights.len()
        )));
    }
    if spec.weights.iter().any(|&w| w <= 0.0) {
        return Err(DatapipeError::Blend("weights must be positive".into()));
    }
    let total_w: f64 = spec.weights.iter().sum();
    let weights: Vec<f64> = spec.weights.iter().map(|w| w / total_w).collect();

    // seeded priority permutation for initial ties
    let mut rng = SeededRng::new(spec.seed);
    let mut priority: Vec<usize> = (0..sources.len()).collect();
    for i in (1..priority.len()).rev() {
        priority.swap(i, rng.uniform_usize(i + 1));
    }
    let rank_of: Vec<usize> = {
        let mut r = vec![0; priority.len()];
        for (rank, &src) in priority.iter().enumerate() {
            r[src] = rank;
        }
        r
    };

    let mut cursors = vec![0usize; sources.len()];
    let mut emitted = vec![0usize; sources.len()];
    let mut last_emit: Vec<Option<usize>> = vec![None; sources.len()];
    let total: usize = sources.iter().map(|s| s.len()).sum();
    let mut out = Vec::with_capacity(total);

    for step in 1..=total {
        // deficit at the step about to be emitted
        let pick = (0..sources.len())
            .max_by(|&a, &b| {
                let da = weights[a] * step as f64 - emitted[a] as f64;
                let db = weights[b] * step as f64 - emitted[b] as f64;
                da.partial_cmp(&db)
                    .unwrap()
                    // least-recently-emitted wins ties (never-emitted first)
                    .then_with(|| {
                        let la = last_emit[a].map_or(-1i64, |v| v as i64);
                        let lb = last_emit[b].map_or(-1i64, |v| v as i64);
                        lb.cmp(&la)
                    })
                    // residual ties: seeded priority
                    .then_with(|| rank_of[b].cmp(&rank_of[a]))
            })
            .expect("at least one source");
        if cursors[pick] >= sources[pick].len() {
            match policy {
                ExhaustionPolicy::Stop => break,
                ExhaustionPolicy::Error => {
                    return Err(DatapipeError::Blend(format!(
                        "source {pick} exhausted with positive weight at step {step}"
                    )))
                }
            }
        }
        out.push(sources[pick][cursors[pick]].clone());
        cursors[pick] += 1;
        emitted[pick] += 1;
        last_emit[pick] = Some(step);
    }
    Ok(out)
}
