//! Foraging-style channel selection.
//!
//! Channels play the role of resource patches and network agents the role of
//! foragers. A greedy agent asks the mediator for the selectivity of every
//! channel and moves to the best one it does not already hold. With
//! homogeneous channels and `sum M_i <= N`, greedy agents always land on
//! empty channels. No agent can then gain by moving, which
//! [`ess_deviation_check`] verifies exhaustively.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mediator::{Mediator, MediatorError, Selectivity};
use crate::NetworkId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("budget exceeds channels: every channel is already held by this network")]
    BudgetExceedsChannels,
    #[error("budgets total {total} but only {channels} channels exist")]
    InfeasibleBudgets { total: usize, channels: usize },
    #[error("{budgets} budgets for {networks} registered networks")]
    BudgetCountMismatch { budgets: usize, networks: usize },
    #[error("{strategies} strategies for {networks} networks")]
    StrategyCountMismatch { strategies: usize, networks: usize },
    #[error(transparent)]
    Mediator(#[from] MediatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Greedy argmax over mediator-reported selectivity.
    ShareGreedy,
    /// Uniform over channels this network does not hold yet.
    UniformRandom,
}

/// Named mixes of strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyPreset {
    AllShare,
    AllRandom,
    /// Exactly one network picks at random.
    Hybrid1,
    /// `floor(n / 2)` networks pick at random.
    Hybrid2,
}

impl StrategyPreset {
    pub const ALL: [StrategyPreset; 4] = [
        StrategyPreset::AllShare,
        StrategyPreset::AllRandom,
        StrategyPreset::Hybrid1,
        StrategyPreset::Hybrid2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyPreset::AllShare => "all-share",
            StrategyPreset::AllRandom => "all-random",
            StrategyPreset::Hybrid1 => "hybrid1",
            StrategyPreset::Hybrid2 => "hybrid2",
        }
    }

    /// How many of `n` networks play [`Strategy::UniformRandom`].
    pub fn random_count(self, n: usize) -> usize {
        match self {
            StrategyPreset::AllShare => 0,
            StrategyPreset::AllRandom => n,
            StrategyPreset::Hybrid1 => n.min(1),
            StrategyPreset::Hybrid2 => n / 2,
        }
    }

    pub fn assign(self, n: usize, membership: HybridMembership) -> StrategyAssignment {
        let k = self.random_count(n);
        let mut strategies = vec![Strategy::ShareGreedy; n];
        let random: Vec<usize> = match membership {
            HybridMembership::HighestIndexed => (n - k..n).collect(),
            HybridMembership::LowestIndexed => (0..k).collect(),
            HybridMembership::Seeded(seed) => {
                sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec()
            }
        };
        for i in random {
            strategies[i] = Strategy::UniformRandom;
        }
        StrategyAssignment { strategies }
    }
}

impl std::str::FromStr for StrategyPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected all-share, all-random, hybrid1 or hybrid2)"))
    }
}

/// Which networks a hybrid preset makes random.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HybridMembership {
    /// The last networks in turn order. They pick after the greedy ones and
    /// can therefore collide even when every budget is one.
    #[default]
    HighestIndexed,
    LowestIndexed,
    /// A seed-driven choice, for sensitivity checks.
    Seeded(u64),
}

/// Interleaving of agents during selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TurnOrder {
    /// One agent per network per turn, in registration order.
    #[default]
    RoundRobin,
    /// All agents of network 0, then all of network 1, and so on.
    NetworkByNetwork,
}

/// Per-network strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrategyAssignment {
    pub strategies: Vec<Strategy>,
}

impl StrategyAssignment {
    pub fn random_count(&self) -> usize {
        self.strategies
            .iter()
            .filter(|s| **s == Strategy::UniformRandom)
            .count()
    }
}

/// Outcome of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelAssignment {
    pub networks: Vec<NetworkId>,
    /// `C_i` in pick order. Entries within one network are distinct.
    pub channels: Vec<Vec<usize>>,
    /// `y_h` for every channel.
    pub occupancy: Vec<u32>,
}

impl ChannelAssignment {
    /// Builds an assignment from per-network channel lists, deriving the
    /// occupancy.
    pub fn from_channels(networks: Vec<NetworkId>, channels: Vec<Vec<usize>>, channel_count: usize) -> Self {
        let mut occupancy = vec![0u32; channel_count];
        for &h in channels.iter().flatten() {
            occupancy[h] += 1;
        }
        ChannelAssignment {
            networks,
            channels,
            occupancy,
        }
    }

    /// Number of agents, `P`.
    pub fn agents(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }

    /// `f = 1 / y_h` for every agent, network by network.
    pub fn agent_fitness(&self) -> Vec<f64> {
        self.channels
            .iter()
            .flatten()
            .map(|&h| 1.0 / self.occupancy[h] as f64)
            .collect()
    }
}

/// The best channel not already in `own`. Ties go to the lowest index.
pub fn greedy_pick(selectivities: &[Selectivity], own: &[usize]) -> Result<usize, SelectionError> {
    let mut best: Option<(usize, Selectivity)> = None;
    for (h, &e) in selectivities.iter().enumerate() {
        if own.contains(&h) {
            continue;
        }
        if best.is_none_or(|(_, top)| e > top) {
            best = Some((h, e));
        }
    }
    best.map(|(h, _)| h).ok_or(SelectionError::BudgetExceedsChannels)
}

/// A uniformly random channel among those not already in `own`.
pub fn random_pick<R: Rng + ?Sized>(
    channels: usize,
    own: &[usize],
    rng: &mut R,
) -> Result<usize, SelectionError> {
    let free: Vec<usize> = (0..channels).filter(|h| !own.contains(h)).collect();
    if free.is_empty() {
        return Err(SelectionError::BudgetExceedsChannels);
    }
    Ok(free[rng.gen_range(0..free.len())])
}

/// Runs channel selection for every registered network, round-robin.
///
/// `budgets[i]` belongs to the `i`-th registered network. Every pick is
/// recorded with the mediator, so greedy agents see random agents' choices.
pub fn run_selection<R: Rng + ?Sized>(
    budgets: &[usize],
    assignment: &StrategyAssignment,
    mediator: &mut Mediator,
    rng: &mut R,
) -> Result<ChannelAssignment, SelectionError> {
    run_selection_with(budgets, assignment, mediator, rng, TurnOrder::RoundRobin)
}

pub fn run_selection_with<R: Rng + ?Sized>(
    budgets: &[usize],
    assignment: &StrategyAssignment,
    mediator: &mut Mediator,
    rng: &mut R,
    order: TurnOrder,
) -> Result<ChannelAssignment, SelectionError> {
    let networks = mediator.registered().to_vec();
    let channel_count = mediator.channels();
    if budgets.len() != networks.len() {
        return Err(SelectionError::BudgetCountMismatch {
            budgets: budgets.len(),
            networks: networks.len(),
        });
    }
    if assignment.strategies.len() != networks.len() {
        return Err(SelectionError::StrategyCountMismatch {
            strategies: assignment.strategies.len(),
            networks: networks.len(),
        });
    }
    let total: usize = budgets.iter().sum();
    if total > channel_count {
        return Err(SelectionError::InfeasibleBudgets {
            total,
            channels: channel_count,
        });
    }

    let turns: Vec<usize> = match order {
        TurnOrder::RoundRobin => {
            let longest = budgets.iter().copied().max().unwrap_or(0);
            (0..longest)
                .flat_map(|turn| (0..networks.len()).filter(move |&i| turn < budgets[i]))
                .collect()
        }
        TurnOrder::NetworkByNetwork => budgets
            .iter()
            .enumerate()
            .flat_map(|(i, &m)| std::iter::repeat_n(i, m))
            .collect(),
    };

    let mut chosen: Vec<Vec<usize>> = budgets.iter().map(|&m| Vec::with_capacity(m)).collect();
    for i in turns {
        let id = &networks[i];
        let h = match assignment.strategies[i] {
            Strategy::ShareGreedy => {
                let selectivity = mediator.selectivity_vector(id)?;
                greedy_pick(&selectivity, &chosen[i])?
            }
            Strategy::UniformRandom => random_pick(channel_count, &chosen[i], rng)?,
        };
        mediator.record_selection(id, h)?;
        chosen[i].push(h);
    }
    Ok(ChannelAssignment::from_channels(networks, chosen, channel_count))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("system fitness needs at least one agent")]
pub struct EmptyAssignment;

/// `Phi`, the smallest agent fitness.
pub fn system_fitness(assignment: &ChannelAssignment) -> Result<f64, EmptyAssignment> {
    assignment
        .channels
        .iter()
        .flatten()
        .map(|&h| assignment.occupancy[h])
        .max()
        .map(|crowd| 1.0 / crowd as f64)
        .ok_or(EmptyAssignment)
}

/// True when no agent can raise its fitness by moving alone.
///
/// An agent on channel `h` has fitness `1 / y_h`. After vacating `h` and
/// joining `g != h` it would have `1 / (y_g + 1)`. The move pays off exactly
/// when `y_g + 1 < y_h`, which is checked for every agent and every `g`.
pub fn ess_deviation_check(assignment: &ChannelAssignment) -> bool {
    let occupancy = &assignment.occupancy;
    assignment.channels.iter().flatten().all(|&h| {
        occupancy
            .iter()
            .enumerate()
            .all(|(g, &y_g)| g == h || y_g + 1 >= occupancy[h])
    })
}
