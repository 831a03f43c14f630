//! Weighted Lotka-Volterra competition over the contested channels.
//!
//! Every network `i` with bandwidth requirement `R_i` competes as `R_i`
//! identical sub-species. Each sub-species grows logistically against a
//! carrying capacity `C = N - n` and is suppressed (with coefficient `alpha`)
//! by its siblings and by the sanitized sum `beta_i` of every other network's
//! share. At the interior rest point all sub-species hold the same share, so
//! network totals come out proportional to `R_i`.
//!
//! Besides the iteration itself ([`growth_delta`], [`step_network`]) this
//! module carries the analytic companions used as oracles: the proportional
//! split ([`closed_form_equilibrium`]), the exact rest point of the map
//! ([`interior_fixed_point`]), the Jacobian spectrum
//! ([`stability_eigenvalues`]), the logistic time-to-target
//! ([`predicted_convergence_time`]) and the weighted fairness index
//! ([`fairness_index`]).

mod analysis;
mod dynamics;
mod fairness;

pub use analysis::{
    closed_form_equilibrium, interior_fixed_point, predicted_convergence_time,
    stability_eigenvalues, JacobianEigenvalues,
};
pub use dynamics::{growth_delta, step_network, step_network_masked};
pub use fairness::fairness_index;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NetworkId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("carrying capacity is zero; the N = n case has no share dynamics")]
    ZeroCapacity,
    #[error("insufficient channels: N = {channels} < n = {networks}")]
    InsufficientChannels { channels: usize, networks: usize },
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("target beyond logistic asymptote: target {target} >= {asymptote}")]
    TargetBeyondAsymptote { target: f64, asymptote: f64 },
    #[error("fairness undefined: every share is zero")]
    FairnessUndefined,
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Constants shared by every sub-species in one allocation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetitionParams {
    /// Competition coefficient, `0 < alpha < 1`.
    pub alpha: f64,
    /// Intrinsic rate of increase per iteration.
    pub r: f64,
    /// Contested channels, `N - n`.
    pub capacity: f64,
    /// Time units advanced per iteration (forward-Euler step).
    pub step: f64,
    /// A round counts as converged when every `|delta|` is below this.
    pub tolerance: f64,
    pub max_rounds: usize,
}

impl CompetitionParams {
    pub const DEFAULT_STEP: f64 = 1.0;
    pub const DEFAULT_TOLERANCE: f64 = 1e-6;
    pub const DEFAULT_MAX_ROUNDS: usize = 10_000;

    /// Parameters with default step, tolerance and round budget.
    pub fn new(alpha: f64, r: f64, capacity: f64) -> Result<Self, ModelError> {
        let params = CompetitionParams {
            alpha,
            r,
            capacity,
            step: Self::DEFAULT_STEP,
            tolerance: Self::DEFAULT_TOLERANCE,
            max_rounds: Self::DEFAULT_MAX_ROUNDS,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters for `networks` networks sharing `channels` channels.
    pub fn for_channels(
        alpha: f64,
        r: f64,
        channels: usize,
        networks: usize,
    ) -> Result<Self, ModelError> {
        Self::new(alpha, r, contested_capacity(channels, networks)? as f64)
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_rounds(mut self, max_rounds: usize) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    /// Checks the parameter ranges.
    ///
    /// `r >= 2` is accepted: the discrete map stops converging there, and that
    /// outcome is reported by the allocation run rather than refused up front.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("{} is outside (0, 1)", self.alpha)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid("r", format!("{} must be positive", self.r)));
        }
        if !(self.capacity >= 0.0 && self.capacity.is_finite()) {
            return Err(invalid("capacity", format!("{} must be >= 0", self.capacity)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid("step", format!("{} must be positive", self.step)));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance", format!("{} must be positive", self.tolerance)));
        }
        if self.max_rounds == 0 {
            return Err(invalid("max_rounds", "must be at least 1"));
        }
        Ok(())
    }

    /// True when `r` lies in the range where the discrete map is stable.
    pub fn in_stable_regime(&self) -> bool {
        self.r < 2.0 && self.alpha < 1.0
    }
}

/// `N - n`, the number of channels left to compete for.
pub fn contested_capacity(channels: usize, networks: usize) -> Result<usize, ModelError> {
    channels
        .checked_sub(networks)
        .ok_or(ModelError::InsufficientChannels { channels, networks })
}

/// One network's requirement and the shares of its sub-species.
///
/// The requirement is the number of sub-species, so it is always
/// `sub_shares().len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkAllocState {
    network_id: NetworkId,
    sub_shares: Vec<f64>,
}

impl NetworkAllocState {
    /// A network with `requirement` sub-species, each seeded with `initial_share`.
    pub fn new(
        network_id: impl Into<NetworkId>,
        requirement: u32,
        initial_share: f64,
    ) -> Result<Self, ModelError> {
        if requirement == 0 {
            return Err(invalid("requirement", "must be at least 1"));
        }
        Self::from_shares(network_id, vec![initial_share; requirement as usize])
    }

    pub fn from_shares(
        network_id: impl Into<NetworkId>,
        sub_shares: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if sub_shares.is_empty() {
            return Err(invalid("requirement", "must be at least 1"));
        }
        if let Some(bad) = sub_shares.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(invalid("sub_share", format!("{bad} is not a non-negative number")));
        }
        Ok(NetworkAllocState {
            network_id: network_id.into(),
            sub_shares,
        })
    }

    pub fn network_id(&self) -> &NetworkId {
        &self.network_id
    }

    pub fn requirement(&self) -> u32 {
        self.sub_shares.len() as u32
    }

    pub fn sub_shares(&self) -> &[f64] {
        &self.sub_shares
    }

    /// `S_i`, the sum over sub-species.
    pub fn total(&self) -> f64 {
        self.sub_shares.iter().sum()
    }

    pub(crate) fn sub_shares_mut(&mut self) -> &mut Vec<f64> {
        &mut self.sub_shares
    }
}

/// Outcome of an allocation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub converged: bool,
    pub rounds: usize,
    pub final_states: Vec<NetworkAllocState>,
    /// Network totals exactly as the dynamics left them.
    pub raw_totals: Vec<f64>,
    /// Raw totals rescaled to sum to the capacity.
    pub normalized_totals: Vec<f64>,
}

impl EquilibriumReport {
    pub(crate) fn from_states(
        converged: bool,
        rounds: usize,
        final_states: Vec<NetworkAllocState>,
        capacity: f64,
    ) -> Self {
        let raw_totals: Vec<f64> = final_states.iter().map(NetworkAllocState::total).collect();
        let normalized_totals = normalize_to(&raw_totals, capacity);
        EquilibriumReport {
            converged,
            rounds,
            final_states,
            raw_totals,
            normalized_totals,
        }
    }
}

/// Rescales `values` so they sum to `target`. All-zero input stays zero.
pub fn normalize_to(values: &[f64], target: f64) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    if sum <= 0.0 || target <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| v * target / sum).collect()
}
