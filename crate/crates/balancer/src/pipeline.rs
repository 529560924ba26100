use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BalancerError {
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
    #[error("budget {budget} cannot afford one worker per stage (needs {base})")]
    InfeasibleBudget { budget: f64, base: f64 },
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
}

fn default_accel() -> f64 {
    1.0
}

/// One curation stage: items/s per worker, resource cost per worker, and a
/// hardware-acceleration multiplier (e.g. a hardware video decoder).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub per_worker_rate: f64,
    pub worker_cost: f64,
    #[serde(default = "default_accel")]
    pub hw_accel_factor: f64,
}

impl StageSpec {
    /// Effective items/s of one worker.
    pub fn effective_rate(&self) -> f64 {
        self.per_worker_rate * self.hw_accel_factor
    }
}

/// Ordered stages plus the total resource budget. `queue_capacity`
/// bounds each inter-stage buffer; when absent, each buffer defaults to
/// twice its consumer stage's worker count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub stages: Vec<StageSpec>,
    pub budget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_capacity: Option<usize>,
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<(), BalancerError> {
        if self.stages.is_empty() {
            return Err(BalancerError::InvalidPipeline("at least one stage required".into()));
        }
        for s in &self.stages {
            if s.per_worker_rate <= 0.0 || s.worker_cost <= 0.0 || s.hw_accel_factor < 1.0 {
                return Err(BalancerError::InvalidPipeline(format!(
                    "stage {} needs positive rate/cost and accel >= 1",
                    s.name
                )));
            }
        }
        let base: f64 = self.stages.iter().map(|s| s.worker_cost).sum();
        if self.budget < base {
            return Err(BalancerError::InfeasibleBudget { budget: self.budget, base });
        }
        Ok(())
    }
}

/// Workers deployed per stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub workers: Vec<usize>,
}

impl Allocation {
    pub fn uniform(stages: usize, workers: usize) -> Self {
        Self { workers: vec![workers; stages] }
    }

    pub fn cost(&self, pipeline: &PipelineSpec) -> f64 {
        self.workers
            .iter()
            .zip(&pipeline.stages)
            .map(|(&w, s)| w as f64 * s.worker_cost)
            .sum()
    }

    pub fn validate(&self, pipeline: &PipelineSpec) -> Result<(), BalancerError> {
        if self.workers.len() != pipeline.stages.len() {
            return Err(BalancerError::InvalidAllocation(format!(
                "{} stages but {} worker counts",
                pipeline.stages.len(),
                self.workers.len()
            )));
        }
        if self.workers.iter().any(|&w| w == 0) {
            return Err(BalancerError::InvalidAllocation("every stage needs >= 1 worker".into()));
        }
        if self.cost(pipeline) > pipeline.budget {
            return Err(BalancerError::InvalidAllocation(format!(
                "cost {} exceeds budget {}",
                self.cost(pipeline),
                pipeline.budget
            )));
        }
        Ok(())
    }
}

/// End-to-end items/s of an allocation: the pipeline runs at the rate of
/// its slowest stage.
pub fn analytic_throughput(pipeline: &PipelineSpec, alloc: &Allocation) -> f64 {
    pipeline
        .stages
        .iter()
        .zip(&alloc.workers)
        .map(|(s, &w)| w as f64 * s.effective_rate())
        .fold(f64::INFINITY, f64::min)
}

/// The worked three-stage instance bundled with the CLI: a fast decoder, a
/// slow captioner, a mid-speed embedder, unit costs, budget 16.
pub fn example_pipeline() -> PipelineSpec {
    let stage = |name: &str, rate: f64| StageSpec {
        name: name.to_string(),
        per_worker_rate: rate,
        worker_cost: 1.0,
        hw_accel_factor: 1.0,
    };
    PipelineSpec {
        stages: vec![stage("decode", 10.0), stage("caption", 1.0), stage("embed", 5.0)],
        budget: 16.0,
        queue_capacity: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throughput_is_min_over_stages() {
        let p = example_pipeline();
        let t = analytic_throughput(&p, &Allocation::uniform(3, 1));
        assert_eq!(t, 1.0);
        let t = analytic_throughput(&p, &Allocation { workers: vec![2, 11, 3] });
        assert_eq!(t, 11.0);
    }

    #[test]
    fn hw_accel_multiplies_stage_rate() {
        let mut p = example_pipeline();
        p.stages[0].hw_accel_factor = 3.0;
        // decode alone speeds up 3x; with one worker everywhere the
        // bottleneck (caption) still caps the pipeline
        assert_eq!(p.stages[0].effective_rate(), 30.0);
        assert_eq!(analytic_throughput(&p, &Allocation::uniform(3, 1)), 1.0);
    }

    #[test]
    fn infeasible_budget_rejected() {
        let mut p = example_pipeline();
        p.budget = 2.0;
        assert!(matches!(p.validate(), Err(BalancerError::InfeasibleBudget { .. })));
    }

    #[test]
    fn pipeline_json_roundtrip() {
        let p = example_pipeline();
        let json = serde_json::to_string(&p).unwrap();
        let back: PipelineSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.stages.len(), 3);
        assert_eq!(back.budget, 16.0);
        assert_eq!(back.stages[1].hw_accel_factor, 1.0);
    }
}
