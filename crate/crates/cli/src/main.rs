use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use hdsync::harness::{
    emit_plot_data, evaluate, find_scenario, load_monte_carlo, load_run, model_file, models_from_file,
    run_monte_carlo, run_single, write_monte_carlo, write_run, Algorithm, ExperimentConfig, RunBundle, WORKERS_ENV,
};
use hdsync::neural::{load_models, save_models, InitScheme};
use hdsync::scenario::{load_scenario, save_scenario};
use hdsync::trainer::train_all;
use hdsync::PeriodInput;

#[derive(Parser)]
#[command(name = "hdsync", version, about = "Clock synchronization experiments for half-duplex TDMA networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw accepted scenarios and write them as JSON.
    Generate {
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Train the per-node networks for each seed's scenario.
    Train {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Train on this scenario file instead of drawing one.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run the selected algorithms and write traces and summaries.
    Evaluate {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Evaluate this scenario file instead of running the full pipeline.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Trained models for `--scenario`; trained on the spot when absent.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Run many scenarios and aggregate NPDR and mean-period statistics.
    Montecarlo {
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Write per-figure CSV tables.
    Plotdata {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Directory written by `evaluate`; re-evaluated instead of rerunning.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// `montecarlo_summary.json` to take histograms from.
        #[arg(long)]
        montecarlo: Option<PathBuf>,
    },
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated master seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    scenario_count: Option<usize>,
    /// Comma-separated subset of essbs, pfdsa, classic_no_period.
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<Algorithm>,
    #[arg(long)]
    test_frames: Option<u64>,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long)]
    no_traces: bool,
    #[arg(long)]
    histogram_bins: Option<usize>,
    #[arg(long)]
    connectivity_target: Option<f64>,
    #[arg(long)]
    connectivity_tolerance: Option<f64>,
    #[arg(long)]
    retry_budget: Option<usize>,

    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    nominal_frequency_hz: Option<f64>,
    #[arg(long)]
    clock_accuracy_ppm: Option<f64>,
    #[arg(long)]
    tx_power_dbm: Option<f64>,
    #[arg(long)]
    antenna_height_m: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    p_th_dbm: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gain_offset_db: Option<f64>,
    #[arg(long)]
    side_length_m: Option<f64>,

    #[arg(long)]
    outer_epochs: Option<usize>,
    #[arg(long)]
    loop_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    train_frames: Option<u64>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    loss_time_unit_s: Option<f64>,
    #[arg(long)]
    truncation_slots: Option<usize>,
    #[arg(long)]
    zero_init: bool,
    /// Period loop gain of PFDSA.
    #[arg(long)]
    pfdsa_period_gain: Option<f64>,
    #[arg(long)]
    pfdsa_phase_gain: Option<f64>,

    #[arg(long)]
    essbs_phase_gain: Option<f64>,
    #[arg(long)]
    essbs_period_gain: Option<f64>,
    #[arg(long)]
    classic_gain: Option<f64>,
    /// Feed the ESSBS period loop the raw phase-difference change instead of the per-slot one.
    #[arg(long)]
    raw_period_input: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        set(&mut c.output_dir, self.output_dir.clone());
        if !self.seeds.is_empty() {
            c.seeds = self.seeds.clone();
        }
        if self.base_seed.is_some() || self.scenario_count.is_some() {
            c.seeds.clear();
        }
        set(&mut c.base_seed, self.base_seed);
        set(&mut c.scenario_count, self.scenario_count);
        if !self.algorithms.is_empty() {
            c.algorithms = self.algorithms.clone();
        }
        set(&mut c.test_frames, self.test_frames);
        if self.workers.is_some() {
            c.workers = self.workers;
        }
        if self.no_traces {
            c.write_traces = false;
        }
        set(&mut c.histogram_bins, self.histogram_bins);
        set(&mut c.connectivity_target, self.connectivity_target);
        set(&mut c.connectivity_tolerance, self.connectivity_tolerance);
        set(&mut c.retry_budget, self.retry_budget);

        let g = &mut c.generation;
        set(&mut g.nodes, self.nodes);
        set(&mut g.nominal_frequency_hz, self.nominal_frequency_hz);
        set(&mut g.clock_accuracy_ppm, self.clock_accuracy_ppm);
        set(&mut g.radio.tx_power_dbm, self.tx_power_dbm);
        set(&mut g.radio.antenna_height_m, self.antenna_height_m);
        set(&mut g.radio.p_th_dbm, self.p_th_dbm);
        set(&mut g.radio.gain_offset_db, self.gain_offset_db);
        set(&mut g.radio.side_length_m, self.side_length_m);

        let t = &mut c.training;
        set(&mut t.outer_epochs, self.outer_epochs);
        set(&mut t.loop_epochs, self.loop_epochs);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.frames, self.train_frames);
        if let Some(clip) = self.clip_norm {
            t.clip_norm = (clip > 0.0).then_some(clip);
        }
        set(&mut t.loss_time_unit_s, self.loss_time_unit_s);
        if self.truncation_slots.is_some() {
            t.truncation_slots = self.truncation_slots;
        }
        if self.zero_init {
            t.init = InitScheme::Zeros;
        }
        set(&mut t.gains.period, self.pfdsa_period_gain);
        set(&mut t.gains.phase, self.pfdsa_phase_gain);

        let e = &mut c.essbs;
        set(&mut e.phase_gain, self.essbs_phase_gain);
        set(&mut e.period_gain, self.essbs_period_gain);
        set(&mut e.classic_gain, self.classic_gain);
        if self.raw_period_input {
            e.period_input = PeriodInput::Raw;
        }

        c.validate()?;
        Ok(c)
    }
}

fn seed_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.output_dir.join(format!("seed_{seed}"))
}

/// Runs `job` for every configured seed and reports whether all succeeded.
fn for_each_seed(config: &ExperimentConfig, mut job: impl FnMut(u64) -> Result<()>) -> bool {
    let mut ok = true;
    for seed in config.seed_list() {
        if let Err(e) = job(seed) {
            error!("seed {seed}: {e:#}");
            eprintln!("seed {seed}: failed: {e:#}");
            ok = false;
        }
    }
    ok
}

fn print_bundle(bundle: &RunBundle, dir: &Path) {
    for r in &bundle.results {
        let s = &r.summary;
        println!(
            "seed {} scenario {}: {:<17} steady NPDR {:.3e}  final period range {:.3e} s{}",
            bundle.seed,
            bundle.scenario.seed,
            r.algorithm.name(),
            s.steady_state_npdr,
            s.final_period_spread_s,
            if s.diverged { "  DIVERGED" } else { "" }
        );
    }
    println!("wrote {}", dir.display());
}

fn generate(config: &ExperimentConfig) -> bool {
    for_each_seed(config, |seed| {
        let (scenario, attempts) = find_scenario(config, seed)?;
        let dir = seed_dir(config, seed);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("scenario.json");
        save_scenario(&scenario, &path)?;
        println!(
            "seed {seed}: scenario {} after {attempts} draw(s), connectivity {:.3} -> {}",
            scenario.seed,
            scenario.link_table.connectivity_fraction(),
            path.display()
        );
        Ok(())
    })
}

fn train(config: &ExperimentConfig, scenario_path: Option<&Path>) -> bool {
    let job = |scenario: hdsync::Scenario, dir: PathBuf| -> Result<()> {
        let outcome = train_all(&scenario, &config.training, scenario.seed)?;
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        save_scenario(&scenario, &dir.join("scenario.json"))?;
        save_models(&model_file(&scenario, &outcome.models), &dir.join("models.json"))?;
        let report = serde_json::to_string_pretty(&outcome.reports)?;
        std::fs::write(dir.join("training.json"), report + "\n")?;
        let trained = outcome.reports.iter().filter(|r| r.status == hdsync::trainer::NodeStatus::Trained).count();
        println!("scenario {}: trained {trained}/{} nodes -> {}", scenario.seed, scenario.nodes(), dir.display());
        Ok(())
    };
    match scenario_path {
        Some(path) => match load_scenario(path).map_err(anyhow::Error::from).and_then(|s| job(s, config.output_dir.clone())) {
            Ok(()) => true,
            Err(e) => {
                eprintln!("{}: failed: {e:#}", path.display());
                false
            }
        },
        None => for_each_seed(config, |seed| {
            let (scenario, _) = find_scenario(config, seed)?;
            job(scenario, seed_dir(config, seed))
        }),
    }
}

fn evaluate_file(config: &ExperimentConfig, scenario_path: &Path, models_path: Option<&Path>) -> Result<()> {
    let scenario = load_scenario(scenario_path)?;
    let (models, training) = match models_path {
        Some(p) => (Some(models_from_file(&load_models(p)?, &scenario)?), Vec::new()),
        None if config.algorithms.contains(&Algorithm::Pfdsa) => {
            info!("no models given; training on scenario {}", scenario.seed);
            let outcome = train_all(&scenario, &config.training, scenario.seed)?;
            (Some(outcome.models), outcome.reports)
        }
        None => (None, Vec::new()),
    };
    let results = evaluate(&scenario, models.as_deref(), config)?;
    let bundle = RunBundle { seed: scenario.seed, attempts: 1, scenario, models, training, results };
    write_run(&bundle, &config.output_dir, config.write_traces)?;
    print_bundle(&bundle, &config.output_dir);
    Ok(())
}

fn evaluate_cmd(config: &ExperimentConfig, scenario: Option<&Path>, models: Option<&Path>) -> bool {
    match scenario {
        Some(path) => match evaluate_file(config, path, models) {
            Ok(()) => true,
            Err(e) => {
                eprintln!("{}: failed: {e:#}", path.display());
                false
            }
        },
        None => {
            if models.is_some() {
                eprintln!("--models needs --scenario");
                return false;
            }
            for_each_seed(config, |seed| {
                let bundle = run_single(config, seed)?;
                let dir = seed_dir(config, seed);
                write_run(&bundle, &dir, config.write_traces)?;
                print_bundle(&bundle, &dir);
                Ok(())
            })
        }
    }
}

fn montecarlo(config: &ExperimentConfig) -> Result<bool> {
    let report = run_monte_carlo(config)?;
    let written = write_monte_carlo(&report, &config.output_dir)?;
    for (alg, a) in &report.aggregates {
        println!(
            "{:<17} scenarios {:>4}  diverged {:>3}  NPDR mean {}  std {}",
            alg.name(),
            a.scenarios,
            a.diverged,
            a.npdr_mean.map_or("n/a".into(), |v| format!("{v:.3e}")),
            a.npdr_std.map_or("n/a".into(), |v| format!("{v:.3e}")),
        );
    }
    if let (Some(m), Some(s)) = (report.npdr_mean_ratio, report.npdr_std_ratio) {
        println!("ESSBS/PFDSA NPDR mean ratio {m:.3}, std ratio {s:.3}");
    }
    println!("{}/{} scenarios succeeded; wrote {} files to {}", report.succeeded, report.requested, written.len(), config.output_dir.display());
    for o in report.outcomes.iter().filter(|o| !o.succeeded()) {
        eprintln!("seed {}: failed: {}", o.seed, o.error.as_deref().unwrap_or(""));
    }
    Ok(report.all_succeeded())
}

fn plotdata(config: &ExperimentConfig, run_dir: Option<&Path>, mc_path: Option<&Path>) -> Result<()> {
    let bundle = match run_dir {
        Some(dir) => load_run(dir, config)?,
        None => {
            let seed = *config.seed_list().first().context("no seed configured")?;
            run_single(config, seed)?
        }
    };
    let mc = mc_path.map(load_monte_carlo).transpose()?;
    let written = emit_plot_data(&bundle, mc.as_ref(), &config.output_dir)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    Ok(match cli.command {
        Command::Generate { opts } => generate(&opts.resolve()?),
        Command::Train { opts, scenario } => train(&opts.resolve()?, scenario.as_deref()),
        Command::Evaluate { opts, scenario, models } => evaluate_cmd(&opts.resolve()?, scenario.as_deref(), models.as_deref()),
        Command::Montecarlo { opts } => montecarlo(&opts.resolve()?)?,
        Command::Plotdata { opts, run_dir, montecarlo } => {
            let config = opts.resolve()?;
            if run_dir.is_none() && config.seed_list().len() > 1 {
                bail!("plotdata uses a single run; pass one seed or --run-dir");
            }
            plotdata(&config, run_dir.as_deref(), montecarlo.as_deref())?;
            true
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
