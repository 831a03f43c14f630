//! Scenario files and the end-to-end pipeline.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! channels = 20
//! master_seed = 1          # required once anything is random
//! strategy = "all-share"   # all-share | all-random | hybrid1 | hybrid2
//!
//! [params]
//! alpha = 0.9
//! r = 1.95
//!
//! [[networks]]
//! id = "net1"
//! requirement = 2
//!
//! [[networks]]
//! id = "net2"
//! requirement = 3
//! ```
//!
//! Omitted settings take their defaults (`s0 = 0.1`, `tolerance = 1e-6`,
//! `step = 1`, `max_rounds = 10000`, `share_mode = "normalized"`, ...). The
//! names of defaulted settings are kept in [`Scenario::defaults_applied`] and
//! echoed in every output header.
//!
//! Replication `k` of a scenario draws all of its randomness from a ChaCha8
//! generator seeded with `master_seed` on stream `k`. Results therefore do not
//! depend on thread scheduling, and any single replication can be re-run on
//! its own.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::allocation::{
    allocated_channel_count, clamp_channel_budgets, run_allocation, run_allocation_untraced,
    share_fraction, AllocationError, AllocationTrace, DisturbanceEvent,
};
use crate::foraging::{
    ess_deviation_check, run_selection_with, system_fitness, ChannelAssignment, HybridMembership,
    SelectionError, StrategyPreset, TurnOrder,
};
use crate::mediator::{LogEntry, Mediator};
use crate::metrics::{collision_occurred, collision_score, measured_convergence_rounds, CollisionMeasure};
use crate::model::{fairness_index, CompetitionParams, EquilibriumReport, NetworkAllocState};
use crate::NetworkId;

pub const DEFAULT_S0: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.9;
pub const DEFAULT_R: f64 = 1.95;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        message: message.into(),
    }
}

/// Which totals feed the channel budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareMode {
    /// Raw totals rescaled to sum to `N - n`.
    #[default]
    Normalized,
    /// Raw totals as the dynamics left them.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub id: NetworkId,
    /// Required unless `random_requirements` is set.
    #[serde(default)]
    pub requirement: Option<u32>,
}

/// Integer requirements drawn uniformly from `low..=high` per replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementRange {
    pub low: u32,
    pub high: u32,
}

/// A validated experiment description with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub channels: usize,
    pub networks: Vec<NetworkSpec>,
    pub params: CompetitionParams,
    pub s0: f64,
    pub strategy: StrategyPreset,
    pub hybrid_membership: HybridMembership,
    pub turn_order: TurnOrder,
    pub collision_measure: CollisionMeasure,
    pub disturbances: Vec<DisturbanceEvent>,
    pub master_seed: Option<u64>,
    pub runs: usize,
    pub share_mode: ShareMode,
    /// Fixed channel budgets that bypass the share-to-budget step.
    pub budgets: Option<Vec<usize>>,
    pub random_requirements: Option<RequirementRange>,
    #[serde(skip)]
    pub defaults_applied: Vec<&'static str>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    alpha: Option<f64>,
    r: Option<f64>,
    step: Option<f64>,
    tolerance: Option<f64>,
    max_rounds: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    channels: usize,
    networks: Vec<NetworkSpec>,
    #[serde(default)]
    params: ParamsFile,
    s0: Option<f64>,
    strategy: Option<StrategyPreset>,
    hybrid_membership: Option<HybridMembership>,
    turn_order: Option<TurnOrder>,
    collision_measure: Option<CollisionMeasure>,
    #[serde(default)]
    disturbances: Vec<DisturbanceEvent>,
    master_seed: Option<u64>,
    runs: Option<usize>,
    share_mode: Option<ShareMode>,
    budgets: Option<Vec<usize>>,
    random_requirements: Option<RequirementRange>,
}

fn or_default<T>(value: Option<T>, default: T, name: &'static str, applied: &mut Vec<&'static str>) -> T {
    value.unwrap_or_else(|| {
        applied.push(name);
        default
    })
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Parses and validates scenario TOML.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let mut applied = Vec::new();
    let d = &mut applied;
    let n = file.networks.len();
    let capacity = file.channels.saturating_sub(n) as f64;
    let params = CompetitionParams {
        alpha: or_default(file.params.alpha, DEFAULT_ALPHA, "alpha", d),
        r: or_default(file.params.r, DEFAULT_R, "r", d),
        capacity,
        step: or_default(file.params.step, CompetitionParams::DEFAULT_STEP, "step", d),
        tolerance: or_default(file.params.tolerance, CompetitionParams::DEFAULT_TOLERANCE, "tolerance", d),
        max_rounds: or_default(file.params.max_rounds, CompetitionParams::DEFAULT_MAX_ROUNDS, "max_rounds", d),
    };
    let scenario = Scenario {
        channels: file.channels,
        networks: file.networks,
        params,
        s0: or_default(file.s0, DEFAULT_S0, "s0", d),
        strategy: or_default(file.strategy, StrategyPreset::AllShare, "strategy", d),
        hybrid_membership: or_default(file.hybrid_membership, HybridMembership::default(), "hybrid_membership", d),
        turn_order: or_default(file.turn_order, TurnOrder::default(), "turn_order", d),
        collision_measure: or_default(file.collision_measure, CollisionMeasure::default(), "collision_measure", d),
        disturbances: file.disturbances,
        master_seed: file.master_seed,
        runs: or_default(file.runs, 1, "runs", d),
        share_mode: or_default(file.share_mode, ShareMode::default(), "share_mode", d),
        budgets: file.budgets,
        random_requirements: file.random_requirements,
        defaults_applied: applied,
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// A scenario with all defaults and the given fixed requirements.
    pub fn with_requirements(channels: usize, requirements: &[u32]) -> Self {
        let networks = requirements
            .iter()
            .enumerate()
            .map(|(i, &r)| NetworkSpec {
                id: NetworkId::from(format!("net{}", i + 1)),
                requirement: Some(r),
            })
            .collect::<Vec<_>>();
        Scenario {
            channels,
            params: CompetitionParams {
                alpha: DEFAULT_ALPHA,
                r: DEFAULT_R,
                capacity: channels.saturating_sub(networks.len()) as f64,
                step: CompetitionParams::DEFAULT_STEP,
                tolerance: CompetitionParams::DEFAULT_TOLERANCE,
                max_rounds: CompetitionParams::DEFAULT_MAX_ROUNDS,
            },
            networks,
            s0: DEFAULT_S0,
            strategy: StrategyPreset::AllShare,
            hybrid_membership: HybridMembership::default(),
            turn_order: TurnOrder::default(),
            collision_measure: CollisionMeasure::default(),
            disturbances: Vec::new(),
            master_seed: None,
            runs: 1,
            share_mode: ShareMode::default(),
            budgets: None,
            random_requirements: None,
            defaults_applied: Vec::new(),
        }
    }

    /// `n` networks whose requirements are redrawn every replication.
    pub fn with_random_requirements(channels: usize, n: usize, range: RequirementRange) -> Self {
        let mut s = Scenario::with_requirements(channels, &vec![range.low.max(1); n]);
        for net in &mut s.networks {
            net.requirement = None;
        }
        s.random_requirements = Some(range);
        s
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.networks.len();
        if n == 0 {
            return Err(invalid("networks", "at least one network is required"));
        }
        if self.channels < n {
            return Err(invalid(
                "channels",
                format!("N < n: {} channels for {} networks", self.channels, n),
            ));
        }
        let mut ids: Vec<&NetworkId> = self.networks.iter().map(|s| &s.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("networks", "network ids must be unique"));
        }
        match self.random_requirements {
            Some(range) => {
                if range.low == 0 || range.low > range.high {
                    return Err(invalid(
                        "random_requirements",
                        format!("need 1 <= low <= high, got {}..={}", range.low, range.high),
                    ));
                }
            }
            None => {
                for net in &self.networks {
                    match net.requirement {
                        Some(r) if r >= 1 => {}
                        Some(_) => return Err(invalid("requirement", format!("{} must be >= 1", net.id))),
                        None => return Err(invalid("requirement", format!("missing for {}", net.id))),
                    }
                }
            }
        }
        self.params.validate().map_err(|e| invalid("params", e.to_string()))?;
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(invalid("s0", format!("{} must be positive", self.s0)));
        }
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if let Some(budgets) = &self.budgets {
            if budgets.len() != n {
                return Err(invalid("budgets", format!("{} budgets for {} networks", budgets.len(), n)));
            }
            if budgets.contains(&0) {
                return Err(invalid("budgets", "every budget must be >= 1"));
            }
            if budgets.iter().sum::<usize>() > self.channels {
                return Err(invalid("budgets", "budgets exceed the channel count"));
            }
        }
        let randomized = self.strategy != StrategyPreset::AllShare || self.random_requirements.is_some();
        if randomized && self.master_seed.is_none() {
            return Err(invalid(
                "master_seed",
                "required when a random strategy or random requirements are used",
            ));
        }
        Ok(())
    }

    pub fn network_ids(&self) -> Vec<NetworkId> {
        self.networks.iter().map(|s| s.id.clone()).collect()
    }

    /// Requirements for one replication.
    pub fn draw_requirements<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        match self.random_requirements {
            Some(range) => self
                .networks
                .iter()
                .map(|_| rng.gen_range(range.low..=range.high))
                .collect(),
            None => self
                .networks
                .iter()
                .map(|s| s.requirement.expect("validated"))
                .collect(),
        }
    }

    /// Short content hash identifying this scenario.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).fold(String::new(), |mut out, b| {
            let _ = write!(out, "{b:02x}");
            out
        })
    }

    /// Key/value pairs written at the top of every output file.
    pub fn metadata(&self) -> Vec<(String, String)> {
        let networks = self
            .networks
            .iter()
            .map(|s| match s.requirement {
                Some(r) if self.random_requirements.is_none() => format!("{}:{}", s.id, r),
                _ => s.id.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ");
        let mut meta = vec![
            ("scenario_hash", self.hash()),
            ("channels", self.channels.to_string()),
            ("networks", networks),
            ("alpha", self.params.alpha.to_string()),
            ("r", self.params.r.to_string()),
            ("capacity", self.params.capacity.to_string()),
            ("step", self.params.step.to_string()),
            ("tolerance", format!("{:e}", self.params.tolerance)),
            ("max_rounds", self.params.max_rounds.to_string()),
            ("s0", self.s0.to_string()),
            ("share_mode", format!("{:?}", self.share_mode).to_lowercase()),
            ("strategy", self.strategy.name().to_string()),
            ("hybrid_membership", format!("{:?}", self.hybrid_membership)),
            ("turn_order", format!("{:?}", self.turn_order)),
            ("collision_measure", self.collision_measure.name().to_string()),
            (
                "master_seed",
                self.master_seed.map_or("none".to_string(), |s| s.to_string()),
            ),
            ("seed_rule", "replication k uses ChaCha8(master_seed) on stream k".to_string()),
            ("runs", self.runs.to_string()),
        ];
        if let Some(range) = self.random_requirements {
            meta.push(("random_requirements", format!("{}..={}", range.low, range.high)));
        }
        if let Some(budgets) = &self.budgets {
            meta.push(("budgets", format!("{budgets:?}")));
        }
        let defaults = if self.defaults_applied.is_empty() {
            "none".to_string()
        } else {
            self.defaults_applied.join(",")
        };
        meta.push(("defaults_applied", defaults));
        meta.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn initial_states(&self, requirements: &[u32]) -> Vec<NetworkAllocState> {
        self.networks
            .iter()
            .zip(requirements)
            .map(|(spec, &r)| NetworkAllocState::new(spec.id.clone(), r, self.s0).expect("validated"))
            .collect()
    }

    fn registered_mediator(&self, logged: bool) -> Mediator {
        let mut mediator = if logged {
            Mediator::new(self.channels)
        } else {
            Mediator::unlogged(self.channels)
        };
        for spec in &self.networks {
            mediator.register(&spec.id).expect("ids are unique");
        }
        mediator
    }
}

/// The generator for replication `index` under `master_seed`.
pub fn replication_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// A pipeline failure, labelled with the stage that produced it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("allocation: {0}")]
    Allocation(AllocationError),
    #[error("allocation: did not converge within {rounds} rounds")]
    NotConverged { rounds: usize },
    #[error("budgets: {0}")]
    Budgets(AllocationError),
    #[error("selection: {0}")]
    Selection(#[from] SelectionError),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Allocation(_) | PipelineError::NotConverged { .. } => "allocation",
            PipelineError::Budgets(_) => "budgets",
            PipelineError::Selection(_) => "selection",
        }
    }
}

/// Channel budgets from an equilibrium report: `floor(S_i) + 1` on the chosen
/// totals, clamped so they fit in `channels`.
pub fn budgets_from_report(
    report: &EquilibriumReport,
    mode: ShareMode,
    channels: usize,
) -> Result<Vec<usize>, AllocationError> {
    let totals = match mode {
        ShareMode::Normalized => &report.normalized_totals,
        ShareMode::Raw => &report.raw_totals,
    };
    let counts: Vec<usize> = totals.iter().map(|&s| allocated_channel_count(s)).collect();
    let fractions: Vec<f64> = totals.iter().map(|&s| share_fraction(s)).collect();
    clamp_channel_budgets(&counts, &fractions, channels)
}

/// Derived figures for one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsBundle {
    /// Fairness of the normalized totals; `None` when every share is zero.
    pub fairness: Option<f64>,
    pub system_fitness: f64,
    pub collision: bool,
    pub collision_score: f64,
    pub ess_holds: bool,
    pub convergence_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutcome {
    pub requirements: Vec<u32>,
    pub report: EquilibriumReport,
    pub trace: AllocationTrace,
    pub budgets: Vec<usize>,
    pub assignment: ChannelAssignment,
    pub metrics: MetricsBundle,
    #[serde(skip)]
    pub request_log: Vec<LogEntry>,
}

/// Replication 0 of a scenario after share allocation. A run that used up
/// its rounds is returned, not rejected.
#[derive(Debug)]
pub struct AllocationStage {
    pub requirements: Vec<u32>,
    pub report: EquilibriumReport,
    pub trace: AllocationTrace,
    /// The logged mediator the allocation ran through.
    pub mediator: Mediator,
    pub rng: ChaCha8Rng,
}

pub fn allocation_stage(scenario: &Scenario) -> Result<AllocationStage, PipelineError> {
    let mut rng = replication_rng(scenario.master_seed.unwrap_or(0), 0);
    let requirements = scenario.draw_requirements(&mut rng);
    let mut mediator = scenario.registered_mediator(true);
    let (report, trace) = run_allocation(
        scenario.initial_states(&requirements),
        &scenario.params,
        &scenario.disturbances,
        &mut mediator,
    )
    .map_err(PipelineError::Allocation)?;
    Ok(AllocationStage {
        requirements,
        report,
        trace,
        mediator,
        rng,
    })
}

/// Allocation, budgets, selection and metrics for replication 0 of
/// `scenario`, all through one mediator.
pub fn run_pipeline(scenario: &Scenario) -> Result<PipelineOutcome, PipelineError> {
    let AllocationStage {
        requirements,
        report,
        trace,
        mut mediator,
        mut rng,
    } = allocation_stage(scenario)?;
    if !report.converged {
        return Err(PipelineError::NotConverged { rounds: report.rounds });
    }
    let budgets = match &scenario.budgets {
        Some(fixed) => fixed.clone(),
        None => budgets_from_report(&report, scenario.share_mode, scenario.channels)
            .map_err(PipelineError::Budgets)?,
    };
    let strategies = scenario
        .strategy
        .assign(scenario.networks.len(), scenario.hybrid_membership);
    let assignment = run_selection_with(&budgets, &strategies, &mut mediator, &mut rng, scenario.turn_order)?;
    let final_requirements: Vec<u32> = report.final_states.iter().map(|s| s.requirement()).collect();
    let metrics = MetricsBundle {
        fairness: fairness_index(&report.normalized_totals, &final_requirements).ok(),
        system_fitness: system_fitness(&assignment).unwrap_or(1.0),
        collision: collision_occurred(&assignment),
        collision_score: collision_score(&assignment, scenario.collision_measure),
        ess_holds: ess_deviation_check(&assignment),
        convergence_rounds: measured_convergence_rounds(&trace, scenario.params.tolerance).unwrap_or(report.rounds),
    };
    Ok(PipelineOutcome {
        requirements,
        report,
        trace,
        budgets,
        assignment,
        metrics,
        request_log: mediator.request_log().to_vec(),
    })
}

/// Requirements, budgets and the generator state of one replication, ready
/// for channel selection.
#[derive(Debug, Clone)]
pub struct PreparedReplication {
    pub index: u64,
    pub requirements: Vec<u32>,
    pub budgets: Vec<usize>,
    pub rng: ChaCha8Rng,
}

/// Draws requirements for replication `index` and runs the allocation
/// untraced. The returned generator continues where the draw left off.
pub fn allocate_replication(
    scenario: &Scenario,
    index: u64,
) -> Result<(Vec<u32>, EquilibriumReport, ChaCha8Rng), PipelineError> {
    let mut rng = replication_rng(scenario.master_seed.unwrap_or(0), index);
    let requirements = scenario.draw_requirements(&mut rng);
    let mut mediator = scenario.registered_mediator(false);
    let report = run_allocation_untraced(
        scenario.initial_states(&requirements),
        &scenario.params,
        &scenario.disturbances,
        &mut mediator,
    )
    .map_err(PipelineError::Allocation)?;
    if !report.converged {
        return Err(PipelineError::NotConverged { rounds: report.rounds });
    }
    Ok((requirements, report, rng))
}

/// Draws requirements and derives budgets for replication `index`. Fixed
/// budgets skip the allocation.
pub fn prepare_replication(scenario: &Scenario, index: u64) -> Result<PreparedReplication, PipelineError> {
    if let Some(fixed) = &scenario.budgets {
        let mut rng = replication_rng(scenario.master_seed.unwrap_or(0), index);
        let requirements = scenario.draw_requirements(&mut rng);
        return Ok(PreparedReplication {
            index,
            requirements,
            budgets: fixed.clone(),
            rng,
        });
    }
    let (requirements, report, rng) = allocate_replication(scenario, index)?;
    let budgets =
        budgets_from_report(&report, scenario.share_mode, scenario.channels).map_err(PipelineError::Budgets)?;
    Ok(PreparedReplication {
        index,
        requirements,
        budgets,
        rng,
    })
}

/// Channel selection for a prepared replication under `preset`. The
/// prepared generator is cloned, so every preset sees the same draws.
pub fn select_replication(
    scenario: &Scenario,
    prepared: &PreparedReplication,
    preset: StrategyPreset,
) -> Result<ChannelAssignment, PipelineError> {
    let mut rng = prepared.rng.clone();
    let mut mediator = scenario.registered_mediator(false);
    let strategies = preset.assign(scenario.networks.len(), scenario.hybrid_membership);
    Ok(run_selection_with(
        &prepared.budgets,
        &strategies,
        &mut mediator,
        &mut rng,
        scenario.turn_order,
    )?)
}
