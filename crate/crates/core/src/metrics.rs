//! Reductions over allocation traces and channel assignments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::AllocationTrace;
use crate::foraging::{system_fitness, ChannelAssignment};
use crate::scenario::{prepare_replication, select_replication, PipelineError, Scenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trace did not converge: final max |delta| {final_delta} >= tolerance {tolerance}")]
    NotConverged { final_delta: f64, tolerance: f64 },
}

/// How a single run is scored for collisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionMeasure {
    /// Fraction of channel decisions that land on a channel another network
    /// also holds.
    #[default]
    PerDecision,
    /// 1 if any two networks share a channel, else 0.
    AnyCollision,
    /// Fraction of network pairs that share at least one channel.
    NetworkPairs,
}

impl CollisionMeasure {
    pub fn name(self) -> &'static str {
        match self {
            CollisionMeasure::PerDecision => "per-decision",
            CollisionMeasure::AnyCollision => "any-collision",
            CollisionMeasure::NetworkPairs => "network-pairs",
        }
    }
}

/// True iff some channel is in `C_i` and `C_j` for two different networks.
pub fn collision_occurred(assignment: &ChannelAssignment) -> bool {
    assignment
        .channels
        .iter()
        .enumerate()
        .any(|(i, mine)| shares_with_others(assignment, i, mine))
}

fn shares_with_others(assignment: &ChannelAssignment, i: usize, mine: &[usize]) -> bool {
    mine.iter().any(|h| held_elsewhere(assignment, i, *h))
}

fn held_elsewhere(assignment: &ChannelAssignment, i: usize, h: usize) -> bool {
    assignment
        .channels
        .iter()
        .enumerate()
        .any(|(j, theirs)| j != i && theirs.contains(&h))
}

/// Collision score of one run under `measure`, in `[0, 1]`.
pub fn collision_score(assignment: &ChannelAssignment, measure: CollisionMeasure) -> f64 {
    match measure {
        CollisionMeasure::AnyCollision => {
            if collision_occurred(assignment) {
                1.0
            } else {
                0.0
            }
        }
        CollisionMeasure::PerDecision => {
            let agents = assignment.agents();
            if agents == 0 {
                return 0.0;
            }
            let colliding = assignment
                .channels
                .iter()
                .enumerate()
                .flat_map(|(i, mine)| mine.iter().map(move |&h| (i, h)))
                .filter(|&(i, h)| held_elsewhere(assignment, i, h))
                .count();
            colliding as f64 / agents as f64
        }
        CollisionMeasure::NetworkPairs => {
            let n = assignment.channels.len();
            if n < 2 {
                return 0.0;
            }
            let mut hits = 0usize;
            for i in 0..n {
                for j in i + 1..n {
                    if assignment.channels[i]
                        .iter()
                        .any(|h| assignment.channels[j].contains(h))
                    {
                        hits += 1;
                    }
                }
            }
            hits as f64 / (n * (n - 1) / 2) as f64
        }
    }
}

/// Mean and spread of one metric over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentStats {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std_dev: f64,
    pub runs: usize,
    /// Replication index (random stream) of each value.
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
}

impl ExperimentStats {
    pub fn from_values(values: Vec<f64>, seeds: Vec<u64>) -> Self {
        assert!(!values.is_empty(), "at least one replication");
        assert_eq!(values.len(), seeds.len());
        let runs = values.len();
        let mean = values.iter().sum::<f64>() / runs as f64;
        let std_dev = if runs > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt()
        } else {
            0.0
        };
        ExperimentStats {
            mean,
            std_dev,
            runs,
            seeds,
            values,
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        self.std_dev / (self.runs as f64).sqrt()
    }
}

/// Collision and fitness statistics of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionStats {
    pub collision: ExperimentStats,
    pub collision_any: ExperimentStats,
    pub fitness: ExperimentStats,
}

/// Runs `runs` replications of `scenario` with master seed `seed` and
/// reduces them. Replication `k` draws from stream `k` of the master seed, so
/// results do not depend on how the work is split across threads.
pub fn selection_stats(scenario: &Scenario, runs: usize, seed: u64) -> Result<SelectionStats, PipelineError> {
    let mut scenario = scenario.clone();
    scenario.master_seed = Some(seed);
    let per_run: Vec<(f64, f64, f64)> = (0..runs.max(1) as u64)
        .into_par_iter()
        .map(|k| {
            let prepared = prepare_replication(&scenario, k)?;
            let assignment = select_replication(&scenario, &prepared, scenario.strategy)?;
            Ok((
                collision_score(&assignment, scenario.collision_measure),
                collision_score(&assignment, CollisionMeasure::AnyCollision),
                system_fitness(&assignment).unwrap_or(1.0),
            ))
        })
        .collect::<Result<_, PipelineError>>()?;
    let seeds: Vec<u64> = (0..per_run.len() as u64).collect();
    Ok(SelectionStats {
        collision: ExperimentStats::from_values(per_run.iter().map(|r| r.0).collect(), seeds.clone()),
        collision_any: ExperimentStats::from_values(per_run.iter().map(|r| r.1).collect(), seeds.clone()),
        fitness: ExperimentStats::from_values(per_run.iter().map(|r| r.2).collect(), seeds),
    })
}

/// Mean collision score of `scenario` over `runs` replications, using the
/// scenario's collision measure.
pub fn collision_probability(scenario: &Scenario, runs: usize, seed: u64) -> Result<f64, PipelineError> {
    selection_stats(scenario, runs, seed).map(|s| s.collision.mean)
}

/// The first round from which every later round has `max |delta|` below
/// `tolerance`.
pub fn measured_convergence_rounds(trace: &AllocationTrace, tolerance: f64) -> Result<usize, MetricsError> {
    let rounds = trace.rounds();
    let Some(last) = rounds.last() else {
        return Ok(0);
    };
    if last.max_abs_delta >= tolerance {
        return Err(MetricsError::NotConverged {
            final_delta: last.max_abs_delta,
            tolerance,
        });
    }
    Ok(rounds
        .iter()
        .rposition(|s| s.max_abs_delta >= tolerance)
        .map_or(rounds[0].round, |i| rounds[i + 1].round))
}
