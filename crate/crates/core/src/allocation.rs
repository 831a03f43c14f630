//! Share allocation rounds driven through the mediator, plus the
//! share-to-channel-budget conversion used by channel selection.
//!
//! A round is synchronous. Every network first fetches `beta_i` (built from
//! the previous round's reports), then all networks step their sub-species,
//! then all report their new totals. Update order inside a round therefore
//! cannot influence the outcome.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mediator::{Mediator, MediatorError};
use crate::model::{
    step_network_masked, CompetitionParams, EquilibriumReport, ModelError, NetworkAllocState,
};
use crate::NetworkId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mediator(#[from] MediatorError),
    #[error("network {0} is not registered with the mediator")]
    NotRegistered(NetworkId),
    #[error("capacity {capacity} does not match N - n = {expected}")]
    CapacityMismatch { capacity: f64, expected: usize },
    #[error("invalid disturbance: {0}")]
    InvalidDisturbance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    /// Hold a sub-species at zero for `[start_round, end_round]`, then re-seed
    /// it with its initial share.
    Silence,
    /// Remove a sub-species for good at `start_round`.
    Delete,
}

/// A scheduled perturbation of one sub-species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEvent {
    pub kind: DisturbanceKind,
    pub network: NetworkId,
    /// 1-based index of the sub-species within its network, as numbered at
    /// round 0. Deleting one sub-species does not renumber the others.
    pub sub_species: usize,
    pub start_round: usize,
    /// Last silenced round; ignored for `Delete`.
    #[serde(default)]
    pub end_round: usize,
}

impl DisturbanceEvent {
    pub fn silence(network: impl Into<NetworkId>, sub_species: usize, start: usize, end: usize) -> Self {
        DisturbanceEvent {
            kind: DisturbanceKind::Silence,
            network: network.into(),
            sub_species,
            start_round: start,
            end_round: end,
        }
    }

    pub fn delete(network: impl Into<NetworkId>, sub_species: usize, round: usize) -> Self {
        DisturbanceEvent {
            kind: DisturbanceKind::Delete,
            network: network.into(),
            sub_species,
            start_round: round,
            end_round: round,
        }
    }

    /// The last round at which this event still changes something.
    fn final_round(&self) -> usize {
        match self.kind {
            DisturbanceKind::Silence => self.end_round + 1,
            DisturbanceKind::Delete => self.start_round,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    Silence,
    Release,
    Delete,
}

/// Something that happened at the start of a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventMarker {
    pub kind: MarkerKind,
    pub network: NetworkId,
    pub sub_species: usize,
}

impl fmt::Display for EventMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MarkerKind::Silence => "silence",
            MarkerKind::Release => "release",
            MarkerKind::Delete => "delete",
        };
        write!(f, "{kind}({},{})", self.network, self.sub_species)
    }
}

/// State of every sub-species at the end of one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundSnapshot {
    pub round: usize,
    /// Live sub-species shares per network.
    pub sub_shares: Vec<Vec<f64>>,
    /// Original 1-based labels matching `sub_shares` entry for entry.
    pub labels: Vec<Vec<usize>>,
    pub totals: Vec<f64>,
    /// Largest `|delta|` over active sub-species this round (0 at round 0).
    pub max_abs_delta: f64,
    pub events: Vec<EventMarker>,
}

/// Round-by-round record of an allocation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationTrace {
    pub networks: Vec<NetworkId>,
    /// Requirements at round 0.
    pub initial_requirements: Vec<u32>,
    /// Round 0 followed by every executed round.
    pub snapshots: Vec<RoundSnapshot>,
}

impl AllocationTrace {
    /// Executed rounds, without the initial snapshot.
    pub fn rounds(&self) -> &[RoundSnapshot] {
        self.snapshots.get(1..).unwrap_or(&[])
    }

    /// Snapshot at the end of `round` (0 is the initial state).
    pub fn at(&self, round: usize) -> Option<&RoundSnapshot> {
        self.snapshots.get(round)
    }
}

struct LiveNetwork {
    state: NetworkAllocState,
    labels: Vec<usize>,
    frozen: Vec<bool>,
    seeds: Vec<f64>,
}

impl LiveNetwork {
    fn position(&self, label: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }
}

/// Runs allocation rounds to convergence, recording a trace.
///
/// Every network must already be registered with `mediator`, whose channel
/// count is `N`. Running out of rounds is not an error: the report comes back
/// with `converged = false`.
pub fn run_allocation(
    networks: Vec<NetworkAllocState>,
    params: &CompetitionParams,
    disturbances: &[DisturbanceEvent],
    mediator: &mut Mediator,
) -> Result<(EquilibriumReport, AllocationTrace), AllocationError> {
    let (report, trace) = allocate(networks, params, disturbances, mediator, true)?;
    Ok((report, trace.expect("tracing was requested")))
}

/// [`run_allocation`] without keeping a trace.
pub fn run_allocation_untraced(
    networks: Vec<NetworkAllocState>,
    params: &CompetitionParams,
    disturbances: &[DisturbanceEvent],
    mediator: &mut Mediator,
) -> Result<EquilibriumReport, AllocationError> {
    allocate(networks, params, disturbances, mediator, false).map(|(report, _)| report)
}

fn snapshot(round: usize, live: &[LiveNetwork], max_abs_delta: f64, events: Vec<EventMarker>) -> RoundSnapshot {
    RoundSnapshot {
        round,
        sub_shares: live.iter().map(|n| n.state.sub_shares().to_vec()).collect(),
        labels: live.iter().map(|n| n.labels.clone()).collect(),
        totals: live.iter().map(|n| n.state.total()).collect(),
        max_abs_delta,
        events,
    }
}

fn validate_disturbances(
    disturbances: &[DisturbanceEvent],
    live: &[LiveNetwork],
) -> Result<(), AllocationError> {
    for event in disturbances {
        let Some(network) = live.iter().find(|n| n.state.network_id() == &event.network) else {
            return Err(AllocationError::InvalidDisturbance(format!(
                "unknown network {}",
                event.network
            )));
        };
        if event.sub_species == 0 || network.position(event.sub_species).is_none() {
            return Err(AllocationError::InvalidDisturbance(format!(
                "network {} has no sub-species {}",
                event.network, event.sub_species
            )));
        }
        if event.start_round == 0 {
            return Err(AllocationError::InvalidDisturbance(
                "start_round must be at least 1".into(),
            ));
        }
        if event.kind == DisturbanceKind::Silence && event.end_round < event.start_round {
            return Err(AllocationError::InvalidDisturbance(format!(
                "silence ends at round {} before it starts at {}",
                event.end_round, event.start_round
            )));
        }
    }
    Ok(())
}

fn apply_disturbances(
    round: usize,
    disturbances: &[DisturbanceEvent],
    live: &mut [LiveNetwork],
) -> Result<Vec<EventMarker>, AllocationError> {
    let mut markers = Vec::new();
    for event in disturbances {
        let fires = match event.kind {
            DisturbanceKind::Silence => round == event.start_round || round == event.end_round + 1,
            DisturbanceKind::Delete => round == event.start_round,
        };
        if !fires {
            continue;
        }
        let network = live
            .iter_mut()
            .find(|n| n.state.network_id() == &event.network)
            .expect("validated up front");
        let Some(pos) = network.position(event.sub_species) else {
            return Err(AllocationError::InvalidDisturbance(format!(
                "sub-species ({}, {}) no longer exists at round {round}",
                event.network, event.sub_species
            )));
        };
        let kind = match event.kind {
            DisturbanceKind::Silence if round == event.start_round => {
                network.state.sub_shares_mut()[pos] = 0.0;
                network.frozen[pos] = true;
                MarkerKind::Silence
            }
            DisturbanceKind::Silence => {
                network.state.sub_shares_mut()[pos] = network.seeds[pos];
                network.frozen[pos] = false;
                MarkerKind::Release
            }
            DisturbanceKind::Delete => {
                if network.labels.len() == 1 {
                    return Err(AllocationError::InvalidDisturbance(format!(
                        "cannot delete the last sub-species of {}",
                        event.network
                    )));
                }
                network.state.sub_shares_mut().remove(pos);
                network.labels.remove(pos);
                network.frozen.remove(pos);
                network.seeds.remove(pos);
                MarkerKind::Delete
            }
        };
        markers.push(EventMarker {
            kind,
            network: event.network.clone(),
            sub_species: event.sub_species,
        });
    }
    Ok(markers)
}

fn allocate(
    networks: Vec<NetworkAllocState>,
    params: &CompetitionParams,
    disturbances: &[DisturbanceEvent],
    mediator: &mut Mediator,
    traced: bool,
) -> Result<(EquilibriumReport, Option<AllocationTrace>), AllocationError> {
    params.validate()?;
    let n = networks.len();
    let channels = mediator.channels();
    if channels < n {
        return Err(ModelError::InsufficientChannels { channels, networks: n }.into());
    }
    let expected = channels - n;
    if params.capacity != expected as f64 {
        return Err(AllocationError::CapacityMismatch {
            capacity: params.capacity,
            expected,
        });
    }
    for network in &networks {
        if !mediator.is_registered(network.network_id()) {
            return Err(AllocationError::NotRegistered(network.network_id().clone()));
        }
    }

    let mut live: Vec<LiveNetwork> = networks
        .into_iter()
        .map(|state| LiveNetwork {
            labels: (1..=state.sub_shares().len()).collect(),
            frozen: vec![false; state.sub_shares().len()],
            seeds: state.sub_shares().to_vec(),
            state,
        })
        .collect();
    validate_disturbances(disturbances, &live)?;
    let ids: Vec<NetworkId> = live.iter().map(|n| n.state.network_id().clone()).collect();
    let mut trace = traced.then(|| AllocationTrace {
        networks: ids.clone(),
        initial_requirements: live.iter().map(|n| n.state.requirement()).collect(),
        snapshots: Vec::new(),
    });

    if expected == 0 {
        // N = n: every network keeps exactly its one exclusive channel.
        for network in &mut live {
            network.state.sub_shares_mut().iter_mut().for_each(|s| *s = 0.0);
        }
        for (id, network) in ids.iter().zip(&live) {
            mediator.report_share(id, network.state.total())?;
        }
        if let Some(t) = trace.as_mut() {
            t.snapshots.push(snapshot(0, &live, 0.0, Vec::new()));
        }
        let states = live.into_iter().map(|n| n.state).collect();
        return Ok((EquilibriumReport::from_states(true, 0, states, 0.0), trace));
    }

    for (id, network) in ids.iter().zip(&live) {
        mediator.report_share(id, network.state.total())?;
    }
    if let Some(t) = trace.as_mut() {
        t.snapshots.push(snapshot(0, &live, 0.0, Vec::new()));
    }

    let last_event = disturbances.iter().map(DisturbanceEvent::final_round).max().unwrap_or(0);
    let mut betas = vec![0.0; n];
    let mut converged = false;
    let mut rounds = 0;
    for round in 1..=params.max_rounds {
        rounds = round;
        let events = apply_disturbances(round, disturbances, &mut live)?;
        for (beta, id) in betas.iter_mut().zip(&ids) {
            *beta = mediator.sanitized_sum(id)?;
        }
        let mut max_abs_delta = 0.0f64;
        for (network, &beta) in live.iter_mut().zip(&betas) {
            let (next, delta) = step_network_masked(&network.state, beta, params, &network.frozen)?;
            network.state = next;
            max_abs_delta = max_abs_delta.max(delta);
        }
        for (id, network) in ids.iter().zip(&live) {
            mediator.report_share(id, network.state.total())?;
        }
        if let Some(t) = trace.as_mut() {
            t.snapshots.push(snapshot(round, &live, max_abs_delta, events));
        }
        if max_abs_delta < params.tolerance && round >= last_event {
            converged = true;
            break;
        }
    }

    let states = live.into_iter().map(|n| n.state).collect();
    Ok((
        EquilibriumReport::from_states(converged, rounds, states, params.capacity),
        trace,
    ))
}

/// A share this close below an integer counts as that integer. Converged
/// shares sit within roughly `tolerance / |minor eigenvalue|` of the fixed
/// point, so `8.9999983` has to count as 9.
pub const SHARE_SNAP: f64 = 1e-4;

/// `M_i = floor(S_i) + 1`, the number of channels network `i` may take.
pub fn allocated_channel_count(normalized_total: f64) -> usize {
    (normalized_total.max(0.0) + SHARE_SNAP).floor() as usize + 1
}

/// Fractional part of a share with the same snapping as
/// [`allocated_channel_count`].
pub fn share_fraction(total: f64) -> f64 {
    let snapped = total.max(0.0) + SHARE_SNAP;
    (snapped - snapped.floor() - SHARE_SNAP).max(0.0)
}

/// Trims budgets until `sum M_i <= N`.
///
/// Each step decrements the budget whose share has the smallest fractional
/// part (ties go to the higher network index). No budget drops below one.
pub fn clamp_channel_budgets(
    counts: &[usize],
    fractional_parts: &[f64],
    channels: usize,
) -> Result<Vec<usize>, AllocationError> {
    if counts.len() > channels {
        return Err(ModelError::InsufficientChannels {
            channels,
            networks: counts.len(),
        }
        .into());
    }
    if fractional_parts.len() != counts.len() {
        return Err(ModelError::InvalidParameter {
            name: "fractional_parts",
            reason: format!("{} entries for {} budgets", fractional_parts.len(), counts.len()),
        }
        .into());
    }
    let mut budgets: Vec<usize> = counts.iter().map(|&m| m.max(1)).collect();
    while budgets.iter().sum::<usize>() > channels {
        let victim = (0..budgets.len())
            .filter(|&i| budgets[i] > 1)
            .min_by(|&a, &b| {
                fractional_parts[a]
                    .total_cmp(&fractional_parts[b])
                    .then(b.cmp(&a))
            })
            .expect("n <= N guarantees a reducible budget");
        budgets[victim] -= 1;
    }
    Ok(budgets)
}
