use crate::pipeline::{analytic_throughput, Allocation, BalancerError, PipelineSpec};
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use vdt_numerics::SeededRng;

/// Measured behavior of one simulation run.
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    /// Steady-state items/s at the final stage (10% warmup excluded).
    pub throughput: f64,
    pub items_in: usize,
    pub items_out: usize,
    /// Busy fraction per stage over the makespan.
    pub utilization: Vec<f64>,
    /// Peak depth of each inter-stage buffer (one per stage after the first).
    pub max_queue_depth: Vec<usize>,
    pub makespan: f64,
}

struct Finish {
    time: f64,
    seq: u64,
    stage: usize,
    server: usize,
    item: u64,
    duration: f64,
}

impl PartialEq for Finish {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Finish {}
impl PartialOrd for Finish {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Finish {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap by (time, seq) through reverse ordering
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Gamma(shape, scale) via Marsaglia-Tsang, boosted for shape < 1.
fn gamma_sample(rng: &mut SeededRng, shape: f64, scale: f64) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.uniform().max(1e-300);
        return gamma_sample(rng, shape + 1.0, scale) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.normal();
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = rng.uniform().max(1e-300);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v * scale;
        }
    }
}

struct StageState {
    queue: VecDeque<u64>,
    idle: Vec<usize>,
    blocked: VecDeque<(usize, u64)>,
    rng: SeededRng,
    busy_time: f64,
    started: Vec<u64>,
    max_queue: usize,
}

/// Discrete-event simulation of the pipeline under an allocation.
///
/// Items flow through bounded FIFO buffers; a worker that finishes while
/// the downstream buffer is full blocks until space frees (backpressure).
/// Service times have the configured coefficient of variation (0 =
/// deterministic, 1 = exponential, gamma in between/beyond), drawn from
/// per-stage split streams so the run is a pure function of the seed.
pub fn simulate(
    pipeline: &PipelineSpec,
    alloc: &Allocation,
    n_items: usize,
    service_time_cv: f64,
    seed: u64,
) -> Result<SimReport, BalancerError> {
    pipeline.validate()?;
    alloc.validate(pipeline)?;
    if n_items == 0 {
        return Err(BalancerError::InvalidPipeline("n_items must be >= 1".into()));
    }
    if service_time_cv < 0.0 {
        return Err(BalancerError::InvalidPipeline("cv must be >= 0".into()));
    }
    let n_stages = pipeline.stages.len();
    let root = SeededRng::new(seed);
    let mut stages: Vec<StageState> = (0..n_stages)
        .map(|i| StageState {
            queue: VecDeque::new(),
            idle: (0..alloc.workers[i]).rev().collect(),
            blocked: VecDeque::new(),
            rng: root.split(i as u64),
            busy_time: 0.0,
            started: Vec::new(),
            max_queue: 0,
        })
        .collect();
    // buffer capacity in front of stage i (i >= 1)
    let cap = |i: usize| -> usize {
        pipeline.queue_capacity.unwrap_or(2 * alloc.workers[i]).max(1)
    };

    let mut next_source_item: u64 = 0;
    let mut heap: BinaryHeap<Finish> = BinaryHeap::new();
    let mut seq: u64 = 0;
    let mut now = 0.0f64;
    let mut completions: Vec<f64> = Vec::with_capacity(n_items);

    let mut schedule = |stages: &mut [StageState],
                        heap: &mut BinaryHeap<Finish>,
                        seq: &mut u64,
                        now: f64,
                        stage: usize,
                        item: u64| {
        let st = &mut stages[stage];
        let server = st.idle.pop().expect("caller checked idle");
        st.started.push(item);
        let spec = &pipeline.stages[stage];
        let mean = 1.0 / spec.effective_rate();
        let duration = if service_time_cv == 0.0 {
            mean
        } else {
            let k = 1.0 / (service_time_cv * service_time_cv);
            gamma_sample(&mut st.rng, k, mean / k)
        };
        st.busy_time += duration;
        *seq += 1;
        heap.push(Finish { time: now + duration, seq: *seq, stage, server, item, duration });
    };

    // fixpoint over (unblock, start) transitions
    let settle = |stages: &mut Vec<StageState>,
                  heap: &mut BinaryHeap<Finish>,
                  seq: &mut u64,
                  now: f64,
                  next_source_item: &mut u64| {
        loop {
            let mut changed = false;
            // release blocked workers whose downstream buffer has space
            for i in 0..n_stages.saturating_sub(1) {
                while !stages[i].blocked.is_empty() && stages[i + 1].queue.len() < cap(i + 1) {
                    let (server, item) = stages[i].blocked.pop_front().unwrap();
                    stages[i + 1].queue.push_back(item);
                    stages[i + 1].max_queue = stages[i + 1].max_queue.max(stages[i + 1].queue.len());
                    stages[i].idle.push(server);
                    stages[i].idle.sort_unstable_by(|a, b| b.cmp(a));
                    changed = true;
                }
            }
            // start service wherever a worker and an item are both ready
            for i in 0..n_stages {
                while !stages[i].idle.is_empty() {
                    let item = if i == 0 {
                        if *next_source_item >= n_items as u64 {
                            break;
                        }
                        let item = *next_source_item;
                        *next_source_item += 1;
                        item
                    } else if let Some(item) = stages[i].queue.pop_front() {
                        item
                    } else {
                        break;
                    };
                    schedule(stages, heap, seq, now, i, item);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    };

    settle(&mut stages, &mut heap, &mut seq, now, &mut next_source_item);

    while let Some(ev) = heap.pop() {
        now = ev.time;
        let _ = ev.duration;
        if ev.stage + 1 == n_stages {
            completions.push(now);
            stages[ev.stage].idle.push(ev.server);
            stages[ev.stage].idle.sort_unstable_by(|a, b| b.cmp(a));
        } else if stages[ev.stage + 1].queue.len() < cap(ev.stage + 1) {
            stages[ev.stage + 1].queue.push_back(ev.item);
            let depth = stages[ev.stage + 1].queue.len();
            stages[ev.stage + 1].max_queue = stages[ev.stage + 1].max_queue.max(depth);
            stages[ev.stage].idle.push(ev.server);
            stages[ev.stage].idle.sort_unstable_by(|a, b| b.cmp(a));
        } else {
            stages[ev.stage].blocked.push_back((ev.server, ev.item));
        }
        settle(&mut stages, &mut heap, &mut seq, now, &mut next_source_item);
    }

    let makespan = *completions.last().expect("at least one item");
    // steady-state rate with 10% warmup excluded
    let warm = completions.len() / 10;
    let throughput = if completions.len() > warm + 1 && makespan > completions[warm] {
        (completions.len() - 1 - warm) as f64 / (makespan - completions[warm])
    } else {
        completions.len() as f64 / makespan
    };
    // stage 0 consumes the source strictly in order; later stages are FIFO
    // over their arrival order by construction (VecDeque pop_front)
    debug_assert!(stages[0].started.windows(2).all(|w| w[0] < w[1]));
    for st in &stages {
        debug_assert_eq!(st.started.len(), n_items);
    }
    let utilization = stages
        .iter()
        .zip(&alloc.workers)
        .map(|(st, &w)| (st.busy_time / (w as f64 * makespan)).min(1.0))
        .collect();
    let max_queue_depth = stages[1..].iter().map(|s| s.max_queue).collect();
    Ok(SimReport {
        throughput,
        items_in: n_items,
        items_out: completions.len(),
        utilization,
        max_queue_depth,
        makespan,
    })
}

#[allow(unused)]
fn analytic(pipeline: &PipelineSpec, alloc: &Allocation) -> f64 {
    analytic_throughput(pipeline, alloc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{example_pipeline, StageSpec};

    #[test]
    fn single_deterministic_server_hits_its_rate() {
        let p = PipelineSpec {
            stages: vec![StageSpec {
                name: "only".into(),
                per_worker_rate: 2.0,
                worker_cost: 1.0,
                hw_accel_factor: 1.0,
            }],
            budget: 1.0,
            queue_capacity: None,
        };
        let r = simulate(&p, &Allocation::uniform(1, 1), 2000, 0.0, 1).unwrap();
        assert_eq!(r.items_out, 2000);
        assert!((r.throughput - 2.0).abs() / 2.0 < 0.05, "throughput {}", r.throughput);
    }

    #[test]
    fn balanced_allocation_approaches_analytic() {
        let p = example_pipeline();
        let alloc = Allocation { workers: vec![2, 11, 3] };
        let r = simulate(&p, &alloc, 4000, 0.0, 2).unwrap();
        assert!((r.throughput - 11.0).abs() / 11.0 < 0.05, "throughput {}", r.throughput);
        assert_eq!(r.items_out, 4000);
    }

    #[test]
    fn bottleneck_stage_has_highest_utilization() {
        let p = example_pipeline();
        let alloc = Allocation { workers: vec![2, 11, 3] };
        let r = simulate(&p, &alloc, 4000, 0.0, 3).unwrap();
        // caption (stage 1) is the analytic bottleneck
        for (i, &u) in r.utilization.iter().enumerate() {
            assert!(
                r.utilization[1] >= u - 1e-9,
                "stage {i} utilization {u} exceeds bottleneck {}",
                r.utilization[1]
            );
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = example_pipeline();
        let alloc = Allocation { workers: vec![2, 11, 3] };
        let a = simulate(&p, &alloc, 500, 1.0, 42).unwrap();
        let b = simulate(&p, &alloc, 500, 1.0, 42).unwrap();
        assert_eq!(a.throughput, b.throughput);
        assert_eq!(a.makespan, b.makespan);
        assert_eq!(a.max_queue_depth, b.max_queue_depth);
        let c = simulate(&p, &alloc, 500, 1.0, 43).unwrap();
        assert_ne!(a.makespan, c.makespan, "different seed should differ under cv > 0");
    }

    #[test]
    fn noisy_service_still_conserves_items() {
        let p = example_pipeline();
        let alloc = Allocation { workers: vec![2, 11, 3] };
        let r = simulate(&p, &alloc, 1500, 1.0, 9).unwrap();
        assert_eq!(r.items_out, r.items_in);
        // queues stay within their configured bounds
        for (i, &d) in r.max_queue_depth.iter().enumerate() {
            assert!(d <= 2 * alloc.workers[i + 1], "queue {i} depth {d}");
        }
    }

    #[test]
    fn gamma_sampler_matches_moments() {
        let mut rng = SeededRng::new(7);
        let (shape, scale) = (4.0, 0.25);
        let n = 40_000;
        let samples: Vec<f64> = (0..n).map(|_| gamma_sample(&mut rng, shape, scale)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!((mean - shape * scale).abs() < 0.01, "mean {mean}");
        assert!((var - shape * scale * scale).abs() < 0.01, "var {var}");
    }
}
