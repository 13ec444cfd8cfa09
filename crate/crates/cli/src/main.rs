//! `readout`: runs the readout experiments from a TOML configuration.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use dispersive_readout::discrimination::{Calibration, DiscriminationReport, Histogram};
use dispersive_readout::optimizer::{optimize_pulse, Evaluator};
use dispersive_readout::protocols::{run_fidelity, run_postselection, run_qnd, run_rb, Flag, SimConfig};
use dispersive_readout::{simulate_field, QubitState, StatePath};
use serde::{Deserialize, Serialize};

use config::{
    OptimizeBlock, PostselectBlock, ProtocolBlock, QndBlock, RbBlock, RunConfig, SweepBlock, SweepParam,
    REFERENCE_CONFIG,
};
use output::{Metadata, RunDir, RunReport};

#[derive(Parser)]
#[command(name = "readout", version, about = "Single-shot dispersive readout simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-shot fidelity with histograms and per-shot scores.
    Fidelity(Common),
    /// Two consecutive readouts against their separation.
    Qnd(Common),
    /// Heralded ground-state preparation.
    Postselect(Common),
    /// Randomized benchmarking with depolarizing gate errors.
    Rb(Common),
    /// Genetic search over readout envelopes.
    Optimize(Common),
    /// Fidelity along one readout parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: Option<SweepParam>,
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Print a complete configuration for the reference device.
    Defaults {
        /// Write to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fidelity(_) => "fidelity",
            Command::Qnd(_) => "qnd",
            Command::Postselect(_) => "postselect",
            Command::Rb(_) => "rb",
            Command::Optimize(_) => "optimize",
            Command::Sweep { .. } => "sweep",
            Command::Defaults { .. } => "defaults",
        }
    }
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides REPRO_SEED and the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shots: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Exit with status 3 when the run raises any physics flag.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

enum Failure {
    Config(anyhow::Error),
    Flagged(Vec<Flag>),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

/// Rejected parameters come from the configuration; anything else is a run failure.
impl From<dispersive_readout::Error> for Failure {
    fn from(e: dispersive_readout::Error) -> Self {
        use dispersive_readout::Error as E;
        match e {
            E::InvalidParameter { .. } | E::NotDispersive { .. } => Failure::Config(e.into()),
            other => Failure::Run(other.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            let mut cmd = Cli::command();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                eprintln!("{}", sub.render_usage());
            }
            ExitCode::from(2)
        }
        Err(Failure::Flagged(flags)) => {
            for f in &flags {
                eprintln!("flag: {}", serde_json::to_string(f).unwrap_or_default());
            }
            ExitCode::from(3)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Resolved inputs shared by every protocol.
struct Setup {
    file: RunConfig,
    sim: SimConfig,
    seed: u64,
    shots: usize,
    root: PathBuf,
    strict: bool,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("REPRO_SEED") {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("REPRO_SEED = {s:?}"))?)),
        Err(_) => Ok(None),
    }
}

fn setup(common: &Common, protocol: &str) -> Result<Setup, Failure> {
    let mut file = RunConfig::load(&common.config).map_err(Failure::Config)?;
    if let Some(p) = &file.protocol {
        if p.name() != protocol {
            return Err(Failure::Config(anyhow::anyhow!(
                "config has a [protocol.{}] block but the subcommand is {protocol}",
                p.name()
            )));
        }
    }
    let seed = match common.seed {
        Some(s) => s,
        None => env_seed().map_err(Failure::Config)?.unwrap_or(file.seed),
    };
    file.seed = seed;
    if let Some(shots) = common.shots {
        file.shots = shots;
    }
    if let Some(dir) = &common.output_dir {
        file.output_dir = Some(dir.clone());
    }
    let sim = file.sim(seed).map_err(Failure::Config)?;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting worker pool")?;
    }
    Ok(Setup {
        root: file.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs")),
        shots: file.shots,
        strict: common.strict,
        file,
        sim,
        seed,
    })
}

impl Setup {
    fn finish<R: Serialize>(
        &self,
        protocol: &str,
        result: R,
        flags: &[Flag],
        summary: String,
    ) -> Result<RunDir, Failure> {
        let dir = RunDir::create(&self.root, protocol, self.seed)?;
        let report = RunReport {
            protocol: protocol.to_string(),
            seed: self.seed,
            config: self.file.clone(),
            result,
            metadata: Metadata::now(),
        };
        dir.write_json("report.json", &report)?;
        println!("{summary} flags={} dir={}", flags.len(), dir.path.display());
        Ok(dir)
    }

    fn check(&self, flags: Vec<Flag>) -> Result<(), Failure> {
        if self.strict && !flags.is_empty() {
            Err(Failure::Flagged(flags))
        } else {
            Ok(())
        }
    }
}

fn block<T: Default + Clone>(file: &RunConfig, pick: impl Fn(&ProtocolBlock) -> Option<&T>) -> T {
    file.protocol.as_ref().and_then(pick).cloned().unwrap_or_default()
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Defaults { output } => {
            match output {
                Some(path) => {
                    std::fs::write(&path, REFERENCE_CONFIG).with_context(|| format!("writing {}", path.display()))?
                }
                None => print!("{REFERENCE_CONFIG}"),
            }
            Ok(())
        }
        Command::Fidelity(common) => fidelity(&setup(&common, "fidelity")?),
        Command::Qnd(common) => {
            let s = setup(&common, "qnd")?;
            let b = block(&s.file, |p| match p {
                ProtocolBlock::Qnd(b) => Some(b),
                _ => None,
            });
            qnd(&s, &b)
        }
        Command::Postselect(common) => {
            let s = setup(&common, "postselect")?;
            let b = block(&s.file, |p| match p {
                ProtocolBlock::Postselect(b) => Some(b),
                _ => None,
            });
            postselect(&s, &b)
        }
        Command::Rb(common) => {
            let s = setup(&common, "rb")?;
            let b = block(&s.file, |p| match p {
                ProtocolBlock::Rb(b) => Some(b),
                _ => None,
            });
            rb(&s, &b)
        }
        Command::Optimize(common) => {
            let s = setup(&common, "optimize")?;
            let b = block(&s.file, |p| match p {
                ProtocolBlock::Optimize(b) => Some(b),
                _ => None,
            });
            optimize(&s, &b)
        }
        Command::Sweep {
            common,
            param,
            from,
            to,
            points,
        } => {
            let s = setup(&common, "sweep")?;
            let file_block = match &s.file.protocol {
                Some(ProtocolBlock::Sweep(b)) => Some(b.clone()),
                _ => None,
            };
            let pick = |flag: Option<f64>, key: &str, from_file: Option<f64>| {
                flag.or(from_file)
                    .ok_or_else(|| Failure::Config(anyhow::anyhow!("sweep needs --{key} or protocol.sweep.{key}")))
            };
            let b = SweepBlock {
                param: param
                    .or(file_block.as_ref().map(|b| b.param))
                    .ok_or_else(|| Failure::Config(anyhow::anyhow!("sweep needs --param or protocol.sweep.param")))?,
                from: pick(from, "from", file_block.as_ref().map(|b| b.from))?,
                to: pick(to, "to", file_block.as_ref().map(|b| b.to))?,
                points: points.or(file_block.as_ref().map(|b| b.points)).unwrap_or(20),
            };
            sweep(&s, &b)
        }
    }
}

/// Fidelity result without the per-shot table, which goes to `shots.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub shots: usize,
    pub report: DiscriminationReport<f64>,
    pub histogram: Histogram<f64>,
    pub calibration: Calibration<f64>,
    pub flags: Vec<Flag>,
}

fn fidelity(s: &Setup) -> Result<(), Failure> {
    let result = run_fidelity(&s.sim, s.shots)?;
    let r = &result.report;
    let summary = format!(
        "fidelity seed={} shots={} F={:.4} eps_g={:.4} eps_e={:.4} snr={:.3}",
        s.seed, s.shots, r.fidelity, r.error_g, r.error_e, r.snr_meas
    );
    let report = FidelityReport {
        shots: s.shots,
        report: result.report,
        histogram: result.histogram.clone(),
        calibration: result.calibration,
        flags: result.flags.clone(),
    };
    let dir = s.finish("fidelity", &report, &result.flags, summary)?;
    dir.write_with("histogram.csv", |out| result.histogram.write_csv(out))?;
    dir.write_csv(
        "shots.csv",
        &["index", "intent", "initial_state", "first_jump_time", "score"],
        result.shots.iter().map(|x| {
            row![
                x.index,
                x.intent.label(),
                x.initial_state.label(),
                x.first_jump_time,
                x.score
            ]
        }),
    )?;
    let pulse = s.sim.readout_pulse()?;
    let derived = s.sim.derived()?;
    for state in [QubitState::Ground, QubitState::Excited] {
        let field = simulate_field(&pulse, &StatePath::constant(state), &s.sim.device, &derived)?;
        dir.write_with(&format!("trajectory_{}.csv", state.label()), |out| field.write_csv(out))?;
    }
    s.check(result.flags)
}

fn qnd(s: &Setup, b: &QndBlock) -> Result<(), Failure> {
    let delays = b.delays();
    let result = run_qnd(&s.sim, &delays, s.shots)?;
    let summary = format!(
        "qnd seed={} shots_per_delay={} P_gg(0)={:.4} P_ee(0)={:.4} tau_ee_us={:.3}",
        s.seed,
        s.shots,
        result.p_gg[0],
        result.p_ee[0],
        result.fit_ee.decay_time * 1e6
    );
    let dir = s.finish("qnd", &result, &result.flags, summary)?;
    dir.write_csv(
        "correlation.csv",
        &[
            "delay_s",
            "p_gg",
            "p_ee",
            "events_g",
            "events_e",
            "true_p_gg",
            "true_p_ee",
        ],
        (0..result.delays.len()).map(|k| {
            row![
                result.delays[k],
                result.p_gg[k],
                result.p_ee[k],
                result.events_g[k],
                result.events_e[k],
                result.true_p_gg[k],
                result.true_p_ee[k],
            ]
        }),
    )?;
    s.check(result.flags)
}

fn postselect(s: &Setup, b: &PostselectBlock) -> Result<(), Failure> {
    let result = run_postselection(&s.sim, s.shots, b.timing())?;
    let summary = format!(
        "postselect seed={} shots={} F_raw={:.4} F_selected={:.4} eps_g_selected={:.4} discarded={:.4}",
        s.seed,
        s.shots,
        result.raw.fidelity,
        result.selected.fidelity,
        result.selected.error_g,
        result.discard_fraction
    );
    let dir = s.finish("postselect", &result, &result.flags, summary)?;
    dir.write_with("histogram_raw.csv", |out| result.histogram_raw.write_csv(out))?;
    dir.write_with("histogram_selected.csv", |out| result.histogram_selected.write_csv(out))?;
    s.check(result.flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbReport {
    pub gate_error: f64,
    pub n_seq: usize,
    pub shots_per_seq: usize,
    pub fit: dispersive_readout::protocols::RbResult,
}

fn rb(s: &Setup, b: &RbBlock) -> Result<(), Failure> {
    let fit = run_rb(b.gate_error, &b.sequence_lengths, b.n_seq, b.shots_per_seq, s.seed)?;
    let summary = format!(
        "rb seed={} injected={:.5} recovered={:.5}",
        s.seed, b.gate_error, fit.fitted_error_per_gate
    );
    let report = RbReport {
        gate_error: b.gate_error,
        n_seq: b.n_seq,
        shots_per_seq: b.shots_per_seq,
        fit,
    };
    let dir = s.finish("rb", &report, &report.fit.flags, summary)?;
    let fit = &report.fit;
    dir.write_csv(
        "rb_survival.csv",
        &["length", "survival", "model"],
        fit.sequence_lengths
            .iter()
            .zip(&fit.survival)
            .map(|(&m, &f)| row![m, f, fit.a * fit.p.powi(m as i32) + fit.b]),
    )?;
    s.check(report.fit.flags)
}

fn optimize(s: &Setup, b: &OptimizeBlock) -> Result<(), Failure> {
    let ga = b.ga();
    ga.validate()?;
    let result = optimize_pulse(&ga, &s.sim)?;
    let summary = format!(
        "optimize seed={} best={:.4} baseline={:.4} max_photons={:.2} evaluations={}",
        s.seed, result.best_fitness, result.baseline_fitness, result.best_max_photons, result.evaluations
    );
    let dir = s.finish("optimize", &result, &result.flags, summary)?;
    dir.write_csv(
        "ga_history.csv",
        &["generation", "best", "mean"],
        result.history.iter().map(|h| row![h.generation, h.best, h.mean]),
    )?;
    let pulse = &result.best_envelope;
    let dt = pulse.sample_dt();
    dir.write_csv(
        "envelope.csv",
        &["t", "re_epsilon", "im_epsilon"],
        pulse
            .envelope()
            .iter()
            .enumerate()
            .map(|(k, e)| row![k as f64 * dt, e.re, e.im]),
    )?;
    s.check(result.flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: DiscriminationReport<f64>,
    /// Noiseless peak photon number over both qubit states.
    pub max_photons: f64,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub shots_per_point: usize,
    pub points: Vec<SweepPoint>,
    /// Highest fidelity among points that raised no flag.
    pub best_unflagged: Option<f64>,
}

fn sweep(s: &Setup, b: &SweepBlock) -> Result<(), Failure> {
    if b.points < 2 || !b.from.is_finite() || !b.to.is_finite() {
        return Err(Failure::Config(anyhow::anyhow!(
            "sweep needs finite bounds and at least 2 points"
        )));
    }
    let mut points = Vec::with_capacity(b.points);
    for k in 0..b.points {
        let value = b.from + (b.to - b.from) * k as f64 / (b.points - 1) as f64;
        let sim = b.param.apply(&s.sim, value);
        sim.validate()
            .map_err(|e| Failure::Config(anyhow::anyhow!("{} = {value}: {e}", b.param.name())))?;
        let result = run_fidelity(&sim, s.shots)?;
        let evaluator = Evaluator::new(&sim, sim.chain.saturation_photons, 1, 0)?;
        let max_photons = evaluator.max_photons(&sim.readout_pulse()?)?;
        points.push(SweepPoint {
            value,
            report: result.report,
            max_photons,
            flags: result.flags,
        });
    }
    let best_unflagged = points
        .iter()
        .filter(|p| p.flags.is_empty())
        .max_by(|a, b| a.report.fidelity.total_cmp(&b.report.fidelity))
        .map(|p| p.value);
    let flags: Vec<Flag> = points.iter().flat_map(|p| p.flags.clone()).collect();
    let report = SweepReport {
        param: b.param,
        shots_per_point: s.shots,
        points,
        best_unflagged,
    };
    let best = best_unflagged.map_or("none".to_string(), |v| format!("{v}"));
    let summary = format!(
        "sweep seed={} param={} points={} best_unflagged={best}",
        s.seed,
        b.param.name(),
        b.points
    );
    let dir = s.finish("sweep", &report, &flags, summary)?;
    dir.write_csv(
        "sweep.csv",
        &["value", "fidelity", "error_g", "error_e", "snr", "max_photons", "flags"],
        report.points.iter().map(|p| {
            row![
                p.value,
                p.report.fidelity,
                p.report.error_g,
                p.report.error_e,
                p.report.snr_meas,
                p.max_photons,
                p.flags.len(),
            ]
        }),
    )?;
    s.check(flags)
}
