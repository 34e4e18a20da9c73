//! Experiment pipeline: scenario search, training, head-to-head evaluation,
//! Monte Carlo sweeps and CSV / JSON output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::essbs::{classic_trace, essbs_trace, EssbsConfig};
use crate::error::{Result, SyncError};
use crate::metrics::{mean_phase_offsets, period_spread, summarize, Summary, Trace};
use crate::neural::{load_models, save_models, ModelEntry, ModelFile};
use crate::pfdsa::{pfdsa_trace, scaling_for, NodeModels};
use crate::rng::derive_seed;
use crate::scenario::{accept_scenario, generate_scenario, load_scenario, save_scenario, GenerationConfig, Scenario};
use crate::trainer::{train_all, LoopKind, NodeReport, TrainingConfig};

/// Environment variable read for the worker count when the config leaves it
/// unset.
pub const WORKERS_ENV: &str = "HDSYNC_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Essbs,
    Pfdsa,
    ClassicNoPeriod,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Essbs, Algorithm::Pfdsa, Algorithm::ClassicNoPeriod];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Essbs => "essbs",
            Algorithm::Pfdsa => "pfdsa",
            Algorithm::ClassicNoPeriod => "classic_no_period",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = SyncError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| SyncError::InvalidConfig(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub generation: GenerationConfig,
    pub training: TrainingConfig,
    pub essbs: EssbsConfig,
    /// Frames simulated when evaluating.
    pub test_frames: u64,
    pub algorithms: Vec<Algorithm>,
    pub output_dir: PathBuf,
    /// Explicit master seeds. When empty, `scenario_count` consecutive seeds
    /// starting at `base_seed` are used.
    pub seeds: Vec<u64>,
    pub base_seed: u64,
    pub scenario_count: usize,
    pub connectivity_target: f64,
    pub connectivity_tolerance: f64,
    pub retry_budget: usize,
    pub histogram_bins: usize,
    /// Write per-slot trace CSVs for single runs.
    pub write_traces: bool,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generation: GenerationConfig::default(),
            training: TrainingConfig::default(),
            essbs: EssbsConfig::default(),
            test_frames: 751,
            algorithms: Algorithm::ALL.to_vec(),
            output_dir: PathBuf::from("results"),
            seeds: Vec::new(),
            base_seed: 1,
            scenario_count: 1,
            connectivity_target: 0.30,
            connectivity_tolerance: 0.05,
            retry_budget: 200,
            histogram_bins: 20,
            write_traces: true,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SyncError::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| SyncError::parse(path, &e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        self.training.validate()?;
        self.essbs.validate()?;
        if self.test_frames == 0 {
            return Err(SyncError::Validation("test_frames must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(SyncError::Validation("select at least one algorithm".into()));
        }
        let unique: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return Err(SyncError::Validation("seeds must be unique".into()));
        }
        if self.seeds.is_empty() && self.scenario_count == 0 {
            return Err(SyncError::Validation("scenario_count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.connectivity_target) || !(self.connectivity_tolerance >= 0.0) {
            return Err(SyncError::Validation("connectivity target / tolerance out of range".into()));
        }
        if self.retry_budget == 0 || self.histogram_bins == 0 {
            return Err(SyncError::Validation("retry budget and histogram bins must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(SyncError::Validation("worker count must be positive".into()));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.scenario_count as u64).map(|i| self.base_seed.wrapping_add(i)).collect()
        } else {
            self.seeds.clone()
        }
    }

    fn runs(&self, algorithm: Algorithm) -> bool {
        self.algorithms.contains(&algorithm)
    }
}

/// Draws scenarios from `seed`'s derived sub-seeds until one passes the
/// connectivity filter. Returns it with the number of draws used.
pub fn find_scenario(config: &ExperimentConfig, seed: u64) -> Result<(Scenario, usize)> {
    for attempt in 0..config.retry_budget {
        let s = generate_scenario(derive_seed(seed, attempt as u64), &config.generation)?;
        if accept_scenario(&s, config.connectivity_target, config.connectivity_tolerance) {
            return Ok((s, attempt + 1));
        }
    }
    Err(SyncError::ScenarioExhausted { seed, attempts: config.retry_budget })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    pub summary: Summary,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunBundle {
    pub seed: u64,
    pub attempts: usize,
    pub scenario: Scenario,
    pub models: Option<Vec<NodeModels>>,
    pub training: Vec<NodeReport>,
    pub results: Vec<AlgorithmResult>,
}

impl RunBundle {
    pub fn result(&self, algorithm: Algorithm) -> Option<&AlgorithmResult> {
        self.results.iter().find(|r| r.algorithm == algorithm)
    }

    pub fn summaries(&self) -> BTreeMap<Algorithm, Summary> {
        self.results.iter().map(|r| (r.algorithm, r.summary.clone())).collect()
    }
}

/// Runs every selected algorithm on `scenario` for the configured test
/// frames. `models` is required when PFDSA is selected.
pub fn evaluate(scenario: &Scenario, models: Option<&[NodeModels]>, config: &ExperimentConfig) -> Result<Vec<AlgorithmResult>> {
    let mut algorithms = config.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    algorithms
        .into_iter()
        .map(|algorithm| {
            let trace = match algorithm {
                Algorithm::Essbs => essbs_trace(scenario, config.test_frames, &config.essbs)?,
                Algorithm::ClassicNoPeriod => classic_trace(scenario, config.test_frames, &config.essbs)?,
                Algorithm::Pfdsa => {
                    let models = models.ok_or_else(|| {
                        SyncError::InvalidConfig("PFDSA evaluation needs trained models".into())
                    })?;
                    pfdsa_trace(scenario, models, config.test_frames, &config.training.gains)?
                }
            };
            if let Some(d) = trace.divergence {
                warn!("{algorithm} diverged on scenario {} at slot {} (node {})", scenario.seed, d.slot, d.node);
            }
            Ok(AlgorithmResult { algorithm, summary: summarize(&trace)?, trace })
        })
        .collect()
}

/// Scenario search, training (when PFDSA is selected) and evaluation of all
/// selected algorithms on the same scenario.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<RunBundle> {
    config.validate()?;
    let (scenario, attempts) = find_scenario(config, seed)?;
    info!("seed {seed}: accepted scenario {} after {attempts} draw(s)", scenario.seed);
    let (models, training) = if config.runs(Algorithm::Pfdsa) {
        let outcome = train_all(&scenario, &config.training, scenario.seed)?;
        (Some(outcome.models), outcome.reports)
    } else {
        (None, Vec::new())
    };
    let results = evaluate(&scenario, models.as_deref(), config)?;
    Ok(RunBundle { seed, attempts, scenario, models, training, results })
}

pub fn model_file(scenario: &Scenario, models: &[NodeModels]) -> ModelFile {
    let entries = models
        .iter()
        .enumerate()
        .flat_map(|(node, m)| {
            [(LoopKind::Period, &m.period), (LoopKind::Phase, &m.phase)].map(|(loop_kind, p)| ModelEntry {
                scenario_seed: scenario.seed,
                node,
                loop_kind,
                params: p.clone(),
            })
        })
        .collect();
    ModelFile::new(scenario.nodes(), scaling_for(scenario), entries)
}

/// Rebuilds per-node models from a model file.
pub fn models_from_file(file: &ModelFile, scenario: &Scenario) -> Result<Vec<NodeModels>> {
    let n = scenario.nodes();
    if file.nodes != n {
        return Err(SyncError::Validation(format!("model file is for {} nodes, scenario has {n}", file.nodes)));
    }
    let mut period = vec![None; n];
    let mut phase = vec![None; n];
    for m in &file.models {
        if m.scenario_seed != scenario.seed {
            warn!("model for node {} was trained on scenario {}, not {}", m.node, m.scenario_seed, scenario.seed);
        }
        let slot = match m.loop_kind {
            LoopKind::Period => &mut period[m.node],
            LoopKind::Phase => &mut phase[m.node],
        };
        *slot = Some(m.params.clone());
    }
    period
        .into_iter()
        .zip(phase)
        .enumerate()
        .map(|(i, pair)| match pair {
            (Some(period), Some(phase)) => Ok(NodeModels { period, phase }),
            _ => Err(SyncError::Validation(format!("model file lacks networks for node {i}"))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub scenario_seed: u64,
    pub attempts: usize,
    pub connectivity: f64,
    pub results: BTreeMap<Algorithm, Summary>,
    pub training: Vec<NodeReport>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| SyncError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| SyncError::Csv { path: path.into(), source })
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |source| SyncError::Csv { path: path.into(), source };
    w.write_record(&header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| SyncError::io(path, e))
}

fn per_node(prefix: &str, nodes: usize, unit: &str) -> impl Iterator<Item = String> {
    let (prefix, unit) = (prefix.to_string(), unit.to_string());
    (1..=nodes).map(move |i| format!("{prefix}_{i}{unit}"))
}

fn write_trace_csv(trace: &Trace, path: &Path) -> Result<()> {
    let n = trace.nodes;
    let header = ["slot", "npdr", "mean_period_s", "period_range_s"]
        .into_iter()
        .map(String::from)
        .chain(per_node("phase", n, "_s"))
        .chain(per_node("period", n, "_s"))
        .collect();
    let rows = trace.records.iter().map(|r| {
        let spread = period_spread(&r.periods);
        [r.slot.to_string(), r.npdr().to_string(), spread.mean.to_string(), spread.range.to_string()]
            .into_iter()
            .chain(r.phases.iter().chain(&r.periods).map(f64::to_string))
            .collect()
    });
    write_rows(path, header, rows)
}

/// Writes `scenario.json`, `models.json` (when trained), `summary.json` and,
/// if enabled, one `trace_<algorithm>.csv` per algorithm.
pub fn write_run(bundle: &RunBundle, dir: &Path, write_traces: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| SyncError::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join("scenario.json");
    save_scenario(&bundle.scenario, &path)?;
    written.push(path);
    if let Some(models) = &bundle.models {
        let path = dir.join("models.json");
        save_models(&model_file(&bundle.scenario, models), &path)?;
        written.push(path);
    }
    let summary = RunSummary {
        seed: bundle.seed,
        scenario_seed: bundle.scenario.seed,
        attempts: bundle.attempts,
        connectivity: bundle.scenario.link_table.connectivity_fraction(),
        results: bundle.summaries(),
        training: bundle.training.clone(),
    };
    let path = dir.join("summary.json");
    write_json(&summary, &path)?;
    written.push(path);
    if write_traces {
        for r in &bundle.results {
            let path = dir.join(format!("trace_{}.csv", r.algorithm));
            write_trace_csv(&r.trace, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Loads the scenario and models written by [`write_run`] and re-evaluates
/// them; the run is deterministic, so the traces are the original ones.
pub fn load_run(dir: &Path, config: &ExperimentConfig) -> Result<RunBundle> {
    let scenario = load_scenario(&dir.join("scenario.json"))?;
    let models_path = dir.join("models.json");
    let models = if models_path.exists() {
        Some(models_from_file(&load_models(&models_path)?, &scenario)?)
    } else {
        None
    };
    let summary_path = dir.join("summary.json");
    let (seed, attempts, training) = match fs::read_to_string(&summary_path) {
        Ok(text) => {
            let s: RunSummary = serde_json::from_str(&text).map_err(|e| SyncError::parse(&summary_path, &e))?;
            (s.seed, s.attempts, s.training)
        }
        Err(_) => (scenario.seed, 1, Vec::new()),
    };
    let mut config = config.clone();
    if models.is_none() {
        config.algorithms.retain(|&a| a != Algorithm::Pfdsa);
    }
    let results = if config.algorithms.is_empty() { Vec::new() } else { evaluate(&scenario, models.as_deref(), &config)? };
    Ok(RunBundle { seed, attempts, scenario, models, training, results })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub seed: u64,
    pub scenario_seed: Option<u64>,
    pub error: Option<String>,
    pub results: BTreeMap<Algorithm, Summary>,
}

impl ScenarioOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmAggregate {
    pub scenarios: usize,
    pub diverged: usize,
    /// Over scenarios with a finite NPDR; `None` when there are none.
    pub npdr_mean: Option<f64>,
    pub npdr_std: Option<f64>,
    pub mean_period_mean_s: f64,
    pub mean_period_std_s: f64,
}

/// Shared bin edges with one count vector per algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: BTreeMap<Algorithm, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub requested: usize,
    pub succeeded: usize,
    pub outcomes: Vec<ScenarioOutcome>,
    pub aggregates: BTreeMap<Algorithm, AlgorithmAggregate>,
    /// Mean steady-state NPDR of ESSBS over that of PFDSA.
    pub npdr_mean_ratio: Option<f64>,
    pub npdr_std_ratio: Option<f64>,
    pub npdr_histogram: Histogram,
    pub period_histogram: Histogram,
}

impl MonteCarloReport {
    pub fn all_succeeded(&self) -> bool {
        self.succeeded == self.requested
    }
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Equal-width bins over the finite values of all series. A single distinct
/// value gives one zero-width bin.
pub fn histogram(series: &BTreeMap<Algorithm, Vec<f64>>, bins: usize) -> Histogram {
    let finite = series.values().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return Histogram { edges: Vec::new(), counts: series.keys().map(|&a| (a, Vec::new())).collect() };
    }
    let bins = if lo == hi { 1 } else { bins };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { hi } else { lo + width * b as f64 }).collect();
    let counts = series
        .iter()
        .map(|(&a, values)| {
            let mut c = vec![0; bins];
            for &v in values.iter().filter(|v| v.is_finite()) {
                let b = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
                c[b] += 1;
            }
            (a, c)
        })
        .collect();
    Histogram { edges, counts }
}

fn resolve_workers(configured: Option<usize>) -> Result<Option<usize>> {
    if configured.is_some() {
        return Ok(configured);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(SyncError::InvalidConfig(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Independent [`run_single`] per seed, concurrently up to the worker count.
/// Failed scenarios are recorded and excluded from the aggregates.
pub fn run_monte_carlo(config: &ExperimentConfig) -> Result<MonteCarloReport> {
    config.validate()?;
    let seeds = config.seed_list();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = resolve_workers(config.workers)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| SyncError::InvalidConfig(format!("worker pool: {e}")))?;
    let outcomes: Vec<ScenarioOutcome> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| match run_single(config, seed) {
                Ok(b) => {
                    info!("seed {seed} done");
                    ScenarioOutcome { seed, scenario_seed: Some(b.scenario.seed), error: None, results: b.summaries() }
                }
                Err(e) => {
                    warn!("seed {seed} failed: {e}");
                    ScenarioOutcome { seed, scenario_seed: None, error: Some(e.to_string()), results: BTreeMap::new() }
                }
            })
            .collect()
    });
    Ok(aggregate(outcomes, config))
}

pub fn aggregate(outcomes: Vec<ScenarioOutcome>, config: &ExperimentConfig) -> MonteCarloReport {
    let mut npdr: BTreeMap<Algorithm, Vec<f64>> = BTreeMap::new();
    let mut period: BTreeMap<Algorithm, Vec<f64>> = BTreeMap::new();
    let mut diverged: BTreeMap<Algorithm, usize> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.succeeded()) {
        for (&a, s) in &o.results {
            npdr.entry(a).or_default().push(s.steady_state_npdr);
            period.entry(a).or_default().push(s.final_mean_period_s);
            *diverged.entry(a).or_default() += usize::from(s.diverged);
        }
    }
    let aggregates: BTreeMap<Algorithm, AlgorithmAggregate> = npdr
        .iter()
        .map(|(&a, values)| {
            let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
            let npdr_stats = mean_std(&finite);
            let (mean_period_mean_s, mean_period_std_s) = mean_std(&period[&a]).expect("one value per scenario");
            let agg = AlgorithmAggregate {
                scenarios: values.len(),
                diverged: diverged[&a],
                npdr_mean: npdr_stats.map(|s| s.0),
                npdr_std: npdr_stats.map(|s| s.1),
                mean_period_mean_s,
                mean_period_std_s,
            };
            (a, agg)
        })
        .collect();
    let ratio = |f: fn(&AlgorithmAggregate) -> Option<f64>| {
        let e = f(aggregates.get(&Algorithm::Essbs)?)?;
        let p = f(aggregates.get(&Algorithm::Pfdsa)?)?;
        Some(e / p)
    };
    MonteCarloReport {
        requested: outcomes.len(),
        succeeded: outcomes.iter().filter(|o| o.succeeded()).count(),
        npdr_mean_ratio: ratio(|a| a.npdr_mean),
        npdr_std_ratio: ratio(|a| a.npdr_std),
        npdr_histogram: histogram(&npdr, config.histogram_bins),
        period_histogram: histogram(&period, config.histogram_bins),
        aggregates,
        outcomes,
    }
}

fn write_histogram(h: &Histogram, path: &Path) -> Result<()> {
    let header = ["bin_lo", "bin_hi"]
        .into_iter()
        .map(String::from)
        .chain(h.counts.keys().map(|a| format!("{a}_count")))
        .collect();
    let rows = (0..h.edges.len().saturating_sub(1)).map(|b| {
        [h.edges[b].to_string(), h.edges[b + 1].to_string()]
            .into_iter()
            .chain(h.counts.values().map(|c| c[b].to_string()))
            .collect()
    });
    write_rows(path, header, rows)
}

/// Writes `montecarlo_summary.json`, `scenarios.csv` and the two histogram
/// tables.
pub fn write_monte_carlo(report: &MonteCarloReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| SyncError::io(dir, e))?;
    let summary = dir.join("montecarlo_summary.json");
    write_json(report, &summary)?;

    let algorithms: Vec<Algorithm> = report.aggregates.keys().copied().collect();
    let scenarios = dir.join("scenarios.csv");
    let header = ["seed", "scenario_seed", "error"]
        .into_iter()
        .map(String::from)
        .chain(algorithms.iter().flat_map(|a| [format!("{a}_npdr"), format!("{a}_mean_period_s")]))
        .collect();
    let rows = report.outcomes.iter().map(|o| {
        [
            o.seed.to_string(),
            o.scenario_seed.map(|s| s.to_string()).unwrap_or_default(),
            o.error.clone().unwrap_or_default(),
        ]
        .into_iter()
        .chain(algorithms.iter().flat_map(|a| match o.results.get(a) {
            Some(s) => [s.steady_state_npdr.to_string(), s.final_mean_period_s.to_string()],
            None => [String::new(), String::new()],
        }))
        .collect()
    });
    write_rows(&scenarios, header, rows)?;

    let hist_npdr = dir.join("hist_npdr.csv");
    write_histogram(&report.npdr_histogram, &hist_npdr)?;
    let hist_t = dir.join("hist_T.csv");
    write_histogram(&report.period_histogram, &hist_t)?;
    Ok(vec![summary, scenarios, hist_npdr, hist_t])
}

pub fn load_monte_carlo(path: &Path) -> Result<MonteCarloReport> {
    let text = fs::read_to_string(path).map_err(|e| SyncError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SyncError::parse(path, &e))
}

fn write_per_node(trace: &Trace, path: &Path, label: &str, values: impl Fn(&crate::metrics::TraceRecord) -> Vec<f64>) -> Result<()> {
    let header = std::iter::once("slot".to_string()).chain(per_node(label, trace.nodes, "_s")).collect();
    let rows = trace
        .records
        .iter()
        .map(|r| std::iter::once(r.slot.to_string()).chain(values(r).iter().map(f64::to_string)).collect());
    write_rows(path, header, rows)
}

/// One CSV per figure analog:
///
/// * `fig2.csv`: per-node phase offsets from the mean, phase-only loop;
/// * `fig4a.csv` / `fig4b.csv`: ESSBS per-node periods / NPDR;
/// * `fig5.csv` / `fig6.csv`: PFDSA per-node periods / phase offsets;
/// * `fig7.csv`: NPDR of PFDSA and ESSBS per slot;
/// * `hist_npdr.csv` / `hist_T.csv`: Monte Carlo histograms, when a report is
///   given.
///
/// Figures whose algorithm was not run are skipped.
pub fn emit_plot_data(bundle: &RunBundle, monte_carlo: Option<&MonteCarloReport>, dir: &Path) -> Result<Vec<PathBuf>> {
    if bundle.results.is_empty() && monte_carlo.is_none() {
        return Err(SyncError::Validation("nothing to plot: the bundle has no results".into()));
    }
    fs::create_dir_all(dir).map_err(|e| SyncError::io(dir, e))?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    if let Some(r) = bundle.result(Algorithm::ClassicNoPeriod) {
        write_per_node(&r.trace, &out("fig2.csv"), "offset", |rec| mean_phase_offsets(&rec.phases))?;
    }
    let essbs = bundle.result(Algorithm::Essbs);
    let pfdsa = bundle.result(Algorithm::Pfdsa);
    if let Some(r) = essbs {
        write_per_node(&r.trace, &out("fig4a.csv"), "period", |rec| rec.periods.clone())?;
        let rows = r.trace.records.iter().map(|rec| vec![rec.slot.to_string(), rec.npdr().to_string()]);
        write_rows(&out("fig4b.csv"), vec!["slot".into(), "npdr".into()], rows)?;
    }
    if let Some(r) = pfdsa {
        write_per_node(&r.trace, &out("fig5.csv"), "period", |rec| rec.periods.clone())?;
        write_per_node(&r.trace, &out("fig6.csv"), "offset", |rec| mean_phase_offsets(&rec.phases))?;
    }
    if let (Some(e), Some(p)) = (essbs, pfdsa) {
        let e_npdr = e.trace.npdr_series();
        let p_npdr = p.trace.npdr_series();
        let len = e_npdr.len().max(p_npdr.len());
        let cell = |s: &[f64], k: usize| s.get(k).map(f64::to_string).unwrap_or_default();
        let rows = (0..len).map(|k| vec![k.to_string(), cell(&p_npdr, k), cell(&e_npdr, k)]);
        write_rows(&out("fig7.csv"), vec!["slot".into(), "pfdsa_npdr".into(), "essbs_npdr".into()], rows)?;
    }
    if let Some(mc) = monte_carlo {
        write_histogram(&mc.npdr_histogram, &out("hist_npdr.csv"))?;
        write_histogram(&mc.period_histogram, &out("hist_T.csv"))?;
    }
    Ok(written)
}
