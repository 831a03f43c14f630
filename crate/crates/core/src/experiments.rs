//! Drivers for the five reference experiments.
//!
//! Each driver produces a [`Table`]: `# key: value` metadata lines followed by
//! an ordinary CSV header and rows. Same experiment, runs and seed give
//! byte-identical output.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::allocation::AllocationTrace;
use crate::foraging::StrategyPreset;
use crate::metrics::selection_stats;
use crate::model::fairness_index;
use crate::scenario::{
    allocate_replication, parse_scenario, run_pipeline, PipelineError, RequirementRange, Scenario, ScenarioError,
};

/// The shipped convergence scenario.
pub const FIG2_TOML: &str = include_str!("../../../scenarios/fig2.toml");
/// The shipped disturbance scenario.
pub const FIG3_TOML: &str = include_str!("../../../scenarios/fig3.toml");

pub const DEFAULT_SEED: u64 = 1;
pub const FIG4_RUNS: usize = 20;
pub const FIG5_RUNS: usize = 1000;
pub const FIG6_RUNS: usize = 1000;
pub const FIG6_MEAN: u32 = 4;
pub const FIG6_NETWORKS: usize = 5;
pub const FIG6_CHANNELS: usize = 20;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Fig2,
        Experiment::Fig3,
        Experiment::Fig4,
        Experiment::Fig5,
        Experiment::Fig6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig2 => "fig2",
            Experiment::Fig3 => "fig3",
            Experiment::Fig4 => "fig4",
            Experiment::Fig5 => "fig5",
            Experiment::Fig6 => "fig6",
        }
    }

    fn default_runs(self) -> usize {
        match self {
            Experiment::Fig2 | Experiment::Fig3 => 1,
            Experiment::Fig4 => FIG4_RUNS,
            Experiment::Fig5 => FIG5_RUNS,
            Experiment::Fig6 => FIG6_RUNS,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
            format!("unknown experiment `{s}`; valid names: {}", names.join(", "))
        })
    }
}

/// Overrides accepted by every driver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExperimentOptions {
    pub runs: Option<usize>,
    pub seed: Option<u64>,
}

/// Tabular output with a metadata preamble.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(metadata: Vec<(String, String)>, header: &[&str]) -> Self {
        Table {
            metadata,
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (key, value) in &self.metadata {
            writeln!(out, "# {key}: {value}")?;
        }
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(&self.header)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        writer.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn meta(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// One row per round: every sub-species share, every network total, the
/// round's `max |delta|` and the events applied at its start. Deleted
/// sub-species leave their cells empty.
pub fn trace_table(trace: &AllocationTrace, metadata: Vec<(String, String)>) -> Table {
    let mut header = vec!["round".to_string()];
    for (id, &req) in trace.networks.iter().zip(&trace.initial_requirements) {
        for k in 1..=req {
            header.push(format!("{id}.s{k}"));
        }
    }
    for id in &trace.networks {
        header.push(format!("{id}.total"));
    }
    header.push("max_abs_delta".into());
    header.push("events".into());

    let mut rows = Vec::with_capacity(trace.snapshots.len());
    for snap in &trace.snapshots {
        let mut row = vec![snap.round.to_string()];
        for (i, &req) in trace.initial_requirements.iter().enumerate() {
            for k in 1..=req as usize {
                let cell = snap.labels[i]
                    .iter()
                    .position(|&l| l == k)
                    .map(|p| snap.sub_shares[i][p].to_string())
                    .unwrap_or_default();
                row.push(cell);
            }
        }
        row.extend(snap.totals.iter().map(f64::to_string));
        row.push(snap.max_abs_delta.to_string());
        row.push(
            snap.events
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        );
        rows.push(row);
    }
    Table { metadata, header, rows }
}

/// The trace as JSON lines: a metadata object, then one snapshot per line.
pub fn write_trace_jsonl<W: Write>(trace: &AllocationTrace, metadata: &[(String, String)], mut out: W) -> io::Result<()> {
    let header = serde_json::json!({
        "metadata": metadata
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect::<serde_json::Map<_, _>>(),
        "networks": trace.networks,
        "initial_requirements": trace.initial_requirements,
    });
    writeln!(out, "{header}")?;
    for snap in &trace.snapshots {
        writeln!(out, "{}", serde_json::to_string(snap).map_err(io::Error::other)?)?;
    }
    Ok(())
}

fn trace_experiment(scenario: &Scenario, name: &str) -> Result<(Table, AllocationTrace), ExperimentError> {
    let outcome = run_pipeline(scenario)?;
    let mut metadata = vec![("experiment".to_string(), name.to_string())];
    metadata.extend(scenario.metadata());
    metadata.push(("converged_round".into(), outcome.report.rounds.to_string()));
    metadata.push(("budgets".into(), format!("{:?}", outcome.budgets)));
    let table = trace_table(&outcome.trace, metadata);
    Ok((table, outcome.trace))
}

/// Convergence from `s0` on the shipped two-network scenario.
pub fn fig2() -> Result<(Table, AllocationTrace), ExperimentError> {
    trace_experiment(&parse_scenario(FIG2_TOML)?, "fig2")
}

/// The same scenario with a silence window and a later deletion.
pub fn fig3() -> Result<(Table, AllocationTrace), ExperimentError> {
    trace_experiment(&parse_scenario(FIG3_TOML)?, "fig3")
}

/// Fairness of converged shares against an equal split, for `n` in `2..=10`
/// networks on `N = 4n` channels with requirements drawn from `1..=5`.
pub fn fig4(runs: usize, seed: u64) -> Result<Table, ExperimentError> {
    let mut table = Table::new(
        meta(&[
            ("experiment", "fig4".into()),
            ("networks_swept", "2..=10".into()),
            ("channels", "4n".into()),
            ("requirements", "integer uniform 1..=5".into()),
            ("runs", runs.to_string()),
            ("master_seed", seed.to_string()),
            ("seed_rule", "replication k uses ChaCha8(master_seed) on stream k".into()),
            ("defaults_applied", "alpha,r,s0,step,tolerance,max_rounds,share_mode".into()),
        ]),
        &["n", "replication", "share_fairness", "equal_split_fairness", "requirements"],
    );
    for n in 2..=10usize {
        let mut scenario = Scenario::with_random_requirements(4 * n, n, RequirementRange { low: 1, high: 5 });
        scenario.master_seed = Some(seed);
        let rows: Vec<Vec<String>> = (0..runs as u64)
            .into_par_iter()
            .map(|k| {
                let (requirements, report, _) = allocate_replication(&scenario, k)?;
                let share = fairness_index(&report.normalized_totals, &requirements).expect("positive shares");
                let equal = vec![scenario.params.capacity / n as f64; n];
                let split = fairness_index(&equal, &requirements).expect("positive shares");
                let reqs: Vec<String> = requirements.iter().map(u32::to_string).collect();
                Ok(vec![
                    n.to_string(),
                    k.to_string(),
                    share.to_string(),
                    split.to_string(),
                    reqs.join(" "),
                ])
            })
            .collect::<Result<_, PipelineError>>()?;
        table.rows.extend(rows);
    }
    Ok(table)
}

const SELECTION_HEADER: [&str; 8] = [
    "strategy",
    "mean_fitness",
    "fitness_std",
    "collision",
    "collision_std",
    "collision_any",
    "collision_any_std",
    "runs",
];

fn selection_header(key: &str) -> Vec<&str> {
    let mut header = vec![key];
    header.extend(SELECTION_HEADER);
    header
}

fn selection_row(key: String, scenario: &Scenario, runs: usize, seed: u64) -> Result<Vec<String>, PipelineError> {
    let stats = selection_stats(scenario, runs, seed)?;
    Ok(vec![
        key,
        scenario.strategy.name().to_string(),
        stats.fitness.mean.to_string(),
        stats.fitness.std_dev.to_string(),
        stats.collision.mean.to_string(),
        stats.collision.std_dev.to_string(),
        stats.collision_any.mean.to_string(),
        stats.collision_any.std_dev.to_string(),
        stats.fitness.runs.to_string(),
    ])
}

/// The fig5 scenario for `n` networks and one strategy.
pub fn fig5_scenario(n: usize, strategy: StrategyPreset) -> Scenario {
    let mut scenario = Scenario::with_requirements(20, &vec![1; n]);
    scenario.budgets = Some(vec![1; n]);
    scenario.strategy = strategy;
    scenario
}

/// Fitness and collisions for `n` in `2..=20` networks, one agent each, on 20
/// channels, for every strategy preset.
pub fn fig5(runs: usize, seed: u64) -> Result<Table, ExperimentError> {
    let sample = fig5_scenario(2, StrategyPreset::AllShare);
    let mut table = Table::new(
        meta(&[
            ("experiment", "fig5".into()),
            ("channels", "20".into()),
            ("networks_swept", "2..=20".into()),
            ("budgets", "1 per network".into()),
            ("hybrid_membership", format!("{:?}", sample.hybrid_membership)),
            ("turn_order", format!("{:?}", sample.turn_order)),
            ("collision_measure", sample.collision_measure.name().into()),
            ("runs", runs.to_string()),
            ("master_seed", seed.to_string()),
            ("seed_rule", "replication k uses ChaCha8(master_seed) on stream k".into()),
        ]),
        &selection_header("n"),
    );
    for n in 2..=20 {
        for strategy in StrategyPreset::ALL {
            table.rows.push(selection_row(n.to_string(), &fig5_scenario(n, strategy), runs, seed)?);
        }
    }
    Ok(table)
}

/// The fig6 scenario for spread `sigma` and one strategy.
pub fn fig6_scenario(sigma: u32, strategy: StrategyPreset) -> Scenario {
    let range = RequirementRange {
        low: FIG6_MEAN - sigma,
        high: FIG6_MEAN + sigma,
    };
    let mut scenario = Scenario::with_random_requirements(FIG6_CHANNELS, FIG6_NETWORKS, range);
    scenario.strategy = strategy;
    scenario
}

/// Fitness and collisions for five networks whose requirements are drawn
/// from `4 - sigma..=4 + sigma`, `sigma` in `0..=3`, on 20 channels.
pub fn fig6(runs: usize, seed: u64) -> Result<Table, ExperimentError> {
    let sample = fig6_scenario(0, StrategyPreset::AllShare);
    let mut table = Table::new(
        meta(&[
            ("experiment", "fig6".into()),
            ("channels", FIG6_CHANNELS.to_string()),
            ("networks", FIG6_NETWORKS.to_string()),
            ("requirements", format!("integer uniform {m}-sigma..={m}+sigma", m = FIG6_MEAN)),
            ("share_mode", "normalized".into()),
            ("hybrid_membership", format!("{:?}", sample.hybrid_membership)),
            ("turn_order", format!("{:?}", sample.turn_order)),
            ("collision_measure", sample.collision_measure.name().into()),
            ("runs", runs.to_string()),
            ("master_seed", seed.to_string()),
            ("seed_rule", "replication k uses ChaCha8(master_seed) on stream k".into()),
            ("defaults_applied", "alpha,r,s0,step,tolerance,max_rounds".into()),
        ]),
        &selection_header("sigma"),
    );
    for sigma in 0..=3 {
        for strategy in StrategyPreset::ALL {
            table
                .rows
                .push(selection_row(sigma.to_string(), &fig6_scenario(sigma, strategy), runs, seed)?);
        }
    }
    Ok(table)
}

fn write_file(path: &Path, write: impl FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>) -> Result<(), ExperimentError> {
    let io_err = |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut out = io::BufWriter::new(file);
    write(&mut out).and_then(|_| out.flush()).map_err(io_err)
}

/// Runs `experiment` and writes its files into `out_dir`, returning their
/// paths. Trace experiments also write a JSON-lines copy of the trace.
pub fn run_experiment(
    experiment: Experiment,
    options: ExperimentOptions,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let runs = options.runs.unwrap_or(experiment.default_runs()).max(1);
    let seed = options.seed.unwrap_or(DEFAULT_SEED);
    let csv_path = out_dir.join(format!("{experiment}.csv"));
    let mut written = vec![csv_path.clone()];
    let table = match experiment {
        Experiment::Fig2 | Experiment::Fig3 => {
            let (table, trace) = if experiment == Experiment::Fig2 { fig2()? } else { fig3()? };
            let jsonl = out_dir.join(format!("{experiment}.jsonl"));
            write_file(&jsonl, |out| write_trace_jsonl(&trace, &table.metadata, out))?;
            written.push(jsonl);
            table
        }
        Experiment::Fig4 => fig4(runs, seed)?,
        Experiment::Fig5 => fig5(runs, seed)?,
        Experiment::Fig6 => fig6(runs, seed)?,
    };
    write_file(&csv_path, |out| table.write_csv(out))?;
    Ok(written)
}
