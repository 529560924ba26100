use crate::pipeline::{analytic_throughput, Allocation, BalancerError, PipelineSpec};
use crate::sim::{simulate, SimReport};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationResult {
    pub allocation: Allocation,
    pub throughput: f64,
    /// Fractional-relaxation upper bound `budget / sum(cost_i / rate_i)`.
    pub fractional_upper_bound: f64,
}

fn alloc_for_target(pipeline: &PipelineSpec, target: f64) -> Allocation {
    let workers = pipeline
        .stages
        .iter()
        .map(|s| ((target / s.effective_rate()).ceil() as usize).max(1))
        .collect();
    Allocation { workers }
}

/// Maximizes end-to-end throughput under the budget by bisecting the
/// achievable throughput: a target `m` needs `ceil(m / rate_i)` workers
/// per stage, and the cost of that assignment is monotone in `m`.
///
/// The returned allocation is the pointwise-minimal (hence
/// lexicographically smallest) one achieving the optimal throughput.
pub fn optimize_allocation(pipeline: &PipelineSpec) -> Result<OptimizationResult, BalancerError> {
    pipeline.validate()?;
    let fractional: f64 = pipeline.budget
        / pipeline
            .stages
            .iter()
            .map(|s| s.worker_cost / s.effective_rate())
            .sum::<f64>();
    let feasible = |t: f64| alloc_for_target(pipeline, t).cost(pipeline) <= pipeline.budget;

    let mut lo = 0.0f64;
    let mut hi = fractional + 1.0; // anything above the relaxation is infeasible
    debug_assert!(feasible(lo));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let allocation = alloc_for_target(pipeline, lo);
    let throughput = analytic_throughput(pipeline, &allocation);
    debug_assert!(allocation.cost(pipeline) <= pipeline.budget);
    Ok(OptimizationResult { allocation, throughput, fractional_upper_bound: fractional })
}

/// Secondary mode: the cheapest allocation reaching a target throughput
/// (ignores the budget; callers compare the cost themselves).
pub fn min_cost_allocation(pipeline: &PipelineSpec, target: f64) -> Allocation {
    alloc_for_target(pipeline, target)
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRow {
    pub name: String,
    pub workers: usize,
    pub effective_rate: f64,
    pub utilization: f64,
}

#[derive(Debug, Serialize)]
pub struct SpeedupReport {
    pub ratio: f64,
    pub baseline_throughput: f64,
    pub optimized_throughput: f64,
    /// Index of the analytic bottleneck stage of the baseline allocation.
    pub bottleneck: usize,
    pub rows: Vec<StageRow>,
}

/// Simulates both allocations and reports the measured speedup plus a
/// per-stage utilization table for the optimized allocation.
pub fn speedup_report(
    pipeline: &PipelineSpec,
    baseline: &Allocation,
    optimized: &Allocation,
    n_items: usize,
    service_time_cv: f64,
    seed: u64,
) -> Result<SpeedupReport, BalancerError> {
    baseline.validate(pipeline)?;
    optimized.validate(pipeline)?;
    let base: SimReport = simulate(pipeline, baseline, n_items, service_time_cv, seed)?;
    let opt: SimReport = simulate(pipeline, optimized, n_items, service_time_cv, seed)?;
    let bottleneck = pipeline
        .stages
        .iter()
        .zip(&baseline.workers)
        .enumerate()
        .min_by(|(_, (sa, &wa)), (_, (sb, &wb))| {
            (wa as f64 * sa.effective_rate())
                .partial_cmp(&(wb as f64 * sb.effective_rate()))
                .unwrap()
        })
        .map(|(i, _)| i)
        .expect("non-empty pipeline");
    let rows = pipeline
        .stages
        .iter()
        .zip(&optimized.workers)
        .zip(&opt.utilization)
        .map(|((s, &w), &u)| StageRow {
            name: s.name.clone(),
            workers: w,
            effective_rate: s.effective_rate(),
            utilization: u,
        })
        .collect();
    Ok(SpeedupReport {
        ratio: opt.throughput / base.throughput,
        baseline_throughput: base.throughput,
        optimized_throughput: opt.throughput,
        bottleneck,
        rows,
    })
}
