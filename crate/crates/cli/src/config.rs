//! TOML run configuration. Key names carry their units; unknown keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use dispersive_readout::optimizer::GaConfig;
use dispersive_readout::protocols::{
    default_qnd_delays, default_rb_lengths, PostSelectionTiming, ReadoutSettings, SimConfig,
};
use dispersive_readout::{noise_photons_from_temperature, AmplifierChain, DeviceParams, FilterKind, PreparationModel};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const GHZ: f64 = 1e9;
const MHZ: f64 = 1e6;
/// Divisors, so that decimal inputs land on the nearest double.
const PER_US: f64 = 1e6;
const PER_NS: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub shots: usize,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_calibration_shots")]
    pub calibration_shots: usize,
    #[serde(default = "yes")]
    pub noise_enabled: bool,
    pub device: DeviceBlock,
    pub chains: BTreeMap<String, ChainBlock>,
    pub preparation: PreparationBlock,
    pub readout: ReadoutBlock,
    pub protocol: Option<ProtocolBlock>,
}

fn default_calibration_shots() -> usize {
    5000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceBlock {
    pub cavity_freq_ghz: f64,
    pub cavity_linewidth_mhz: f64,
    pub qubit_freq_ghz: f64,
    pub anharmonicity_mhz: f64,
    pub coupling_mhz: f64,
    pub t1_us: f64,
    pub t2_star_us: f64,
    pub chi_override_mhz: Option<f64>,
    /// Cavity at ω_c + |χ| with the qubit in g.
    pub ground_shifts_up: bool,
}

/// Either `noise_photons` or `noise_temperature_k` (converted at the qubit frequency).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainBlock {
    pub noise_photons: Option<f64>,
    pub noise_temperature_k: Option<f64>,
    pub power_gain_db: f64,
    pub saturation_photons: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparationBlock {
    pub thermal_excited_population: f64,
    pub pi_pulse_error: f64,
    pub pi_pulse_duration_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutBlock {
    pub chain: String,
    pub drive_freq_ghz: f64,
    pub n_bar: f64,
    pub measurement_time_ns: f64,
    #[serde(default = "default_sample_dt")]
    pub sample_dt_ns: f64,
    #[serde(default = "default_window_grid")]
    pub window_grid_ns: f64,
    #[serde(default = "default_filter")]
    pub filter: FilterKind,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Explicit envelope as `[re, im]` pairs in √photons/μs, one per sample.
    pub envelope_sqrt_photons_per_us: Option<Vec<[f64; 2]>>,
}

fn default_sample_dt() -> f64 {
    1.0
}

fn default_window_grid() -> f64 {
    5.0
}

fn default_filter() -> FilterKind {
    FilterKind::Boxcar
}

fn default_bins() -> usize {
    100
}

/// Parameters of the selected experiment. At most one block may be present
/// and it must match the subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolBlock {
    Fidelity {},
    Qnd(QndBlock),
    Postselect(PostselectBlock),
    Rb(RbBlock),
    Optimize(OptimizeBlock),
    Sweep(SweepBlock),
}

impl ProtocolBlock {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fidelity {} => "fidelity",
            Self::Qnd(_) => "qnd",
            Self::Postselect(_) => "postselect",
            Self::Rb(_) => "rb",
            Self::Optimize(_) => "optimize",
            Self::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QndBlock {
    pub delays_us: Option<Vec<f64>>,
}

impl QndBlock {
    pub fn delays(&self) -> Vec<f64> {
        match &self.delays_us {
            Some(d) => d.iter().map(|x| x / PER_US).collect(),
            None => default_qnd_delays(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostselectBlock {
    #[serde(default = "default_pre_ns")]
    pub pre_measurement_ns: f64,
    #[serde(default = "default_wait_ns")]
    pub wait_ns: f64,
}

fn default_pre_ns() -> f64 {
    320.0
}

fn default_wait_ns() -> f64 {
    300.0
}

impl PostselectBlock {
    pub fn timing(&self) -> PostSelectionTiming {
        PostSelectionTiming {
            pre_measurement: self.pre_measurement_ns / PER_NS,
            wait: self.wait_ns / PER_NS,
        }
    }
}

impl Default for PostselectBlock {
    fn default() -> Self {
        Self {
            pre_measurement_ns: default_pre_ns(),
            wait_ns: default_wait_ns(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbBlock {
    pub gate_error: f64,
    #[serde(default = "default_rb_lengths")]
    pub sequence_lengths: Vec<usize>,
    #[serde(default = "default_n_seq")]
    pub n_seq: usize,
    #[serde(default = "default_shots_per_seq")]
    pub shots_per_seq: usize,
}

fn default_n_seq() -> usize {
    50
}

fn default_shots_per_seq() -> usize {
    500
}

impl Default for RbBlock {
    fn default() -> Self {
        Self {
            gate_error: 0.005,
            sequence_lengths: default_rb_lengths(),
            n_seq: default_n_seq(),
            shots_per_seq: default_shots_per_seq(),
        }
    }
}

/// Genetic search settings; every key is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeBlock {
    pub population: Option<usize>,
    pub generations: Option<usize>,
    pub mutation_rate: Option<f64>,
    pub mutation_scale: Option<f64>,
    pub crossover_rate: Option<f64>,
    pub elitism: Option<usize>,
    pub segments: Option<usize>,
    pub shots_per_eval: Option<usize>,
    pub constraint_max_photons: Option<f64>,
    pub max_amplitude: Option<f64>,
    pub optimize_drive_freq: Option<bool>,
    pub drive_freq_span_mhz: Option<f64>,
}

impl OptimizeBlock {
    pub fn ga(&self) -> GaConfig {
        let d = GaConfig::default();
        GaConfig {
            population: self.population.unwrap_or(d.population),
            generations: self.generations.unwrap_or(d.generations),
            mutation_rate: self.mutation_rate.unwrap_or(d.mutation_rate),
            mutation_scale: self.mutation_scale.unwrap_or(d.mutation_scale),
            crossover_rate: self.crossover_rate.unwrap_or(d.crossover_rate),
            elitism: self.elitism.unwrap_or(d.elitism),
            segments: self.segments.unwrap_or(d.segments),
            shots_per_eval: self.shots_per_eval.unwrap_or(d.shots_per_eval),
            constraint_max_photons: self.constraint_max_photons.unwrap_or(d.constraint_max_photons),
            max_amplitude: self.max_amplitude.unwrap_or(d.max_amplitude),
            optimize_drive_freq: self.optimize_drive_freq.unwrap_or(d.optimize_drive_freq),
            drive_freq_span: self.drive_freq_span_mhz.map_or(d.drive_freq_span, |x| x * MHZ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    #[value(name = "n_bar")]
    NBar,
    #[value(name = "drive_freq_ghz")]
    DriveFreqGhz,
    #[value(name = "measurement_time_ns")]
    MeasurementTimeNs,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::NBar => "n_bar",
            Self::DriveFreqGhz => "drive_freq_ghz",
            Self::MeasurementTimeNs => "measurement_time_ns",
        }
    }

    /// Copy of `sim` with the parameter set to `value` (in the key's units).
    pub fn apply(self, sim: &SimConfig, value: f64) -> SimConfig {
        let mut out = sim.clone();
        match self {
            Self::NBar => out.readout.n_bar = value,
            Self::DriveFreqGhz => out.readout.drive_freq = value * GHZ,
            Self::MeasurementTimeNs => out.readout.measurement_time = value / PER_NS,
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub param: SweepParam,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn chain(&self) -> Result<AmplifierChain<f64>> {
        let name = &self.readout.chain;
        let block = self.chains.get(name).ok_or_else(|| {
            let known: Vec<_> = self.chains.keys().map(String::as_str).collect();
            anyhow!("readout.chain = {name:?} is not defined (known: {})", known.join(", "))
        })?;
        let noise_photons = match (block.noise_photons, block.noise_temperature_k) {
            (Some(n), None) => n,
            (None, Some(t)) => noise_photons_from_temperature(t, self.device.qubit_freq_ghz * GHZ),
            _ => bail!("chains.{name}: set exactly one of noise_photons and noise_temperature_k"),
        };
        let chain = AmplifierChain {
            noise_photons,
            power_gain_db: block.power_gain_db,
            saturation_photons: block.saturation_photons,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// Physical configuration in SI units, with `seed` in place of the file's seed.
    pub fn sim(&self, seed: u64) -> Result<SimConfig> {
        let d = &self.device;
        let device = DeviceParams {
            cavity_freq: d.cavity_freq_ghz * GHZ,
            cavity_linewidth_kappa: d.cavity_linewidth_mhz * MHZ,
            qubit_freq: d.qubit_freq_ghz * GHZ,
            anharmonicity: d.anharmonicity_mhz * MHZ,
            coupling_g: d.coupling_mhz * MHZ,
            t1: d.t1_us / PER_US,
            t2_star: d.t2_star_us / PER_US,
            chi_override: d.chi_override_mhz.map(|c| c * MHZ),
            ground_shifts_up: d.ground_shifts_up,
        };
        let p = &self.preparation;
        let preparation = PreparationModel {
            thermal_excited_population: p.thermal_excited_population,
            pi_pulse_error: p.pi_pulse_error,
            pi_pulse_duration: p.pi_pulse_duration_ns / PER_NS,
        };
        let r = &self.readout;
        let envelope = r
            .envelope_sqrt_photons_per_us
            .as_ref()
            .map(|e| e.iter().map(|[re, im]| Complex64::new(*re, *im) * PER_US).collect());
        let sim = SimConfig {
            device,
            chain: self.chain()?,
            preparation,
            readout: ReadoutSettings {
                drive_freq: r.drive_freq_ghz * GHZ,
                n_bar: r.n_bar,
                envelope,
                measurement_time: r.measurement_time_ns / PER_NS,
                sample_dt: r.sample_dt_ns / PER_NS,
                window_grid: r.window_grid_ns / PER_NS,
                filter: r.filter,
                histogram_bins: r.histogram_bins,
            },
            noise_enabled: self.noise_enabled,
            seed,
            calibration_shots: self.calibration_shots,
        };
        sim.validate()?;
        Ok(sim)
    }
}

/// Full parameter set of the reference device, written by `defaults`.
pub const REFERENCE_CONFIG: &str = r#"# Transmon read out through a SLUG-preamplified chain.
seed = 7
shots = 40000
output_dir = "runs"
calibration_shots = 5000
noise_enabled = true

[device]
cavity_freq_ghz = 8.081
cavity_linewidth_mhz = 10.0
qubit_freq_ghz = 5.0353
anharmonicity_mhz = 233.0
coupling_mhz = 67.6
t1_us = 2.8
t2_star_us = 2.0
ground_shifts_up = true

[chains.slug]
noise_photons = 3.2
power_gain_db = 15.0
saturation_photons = 40.0

[chains.hemt]
noise_temperature_k = 4.1
power_gain_db = 40.0
saturation_photons = 1000000.0

[preparation]
thermal_excited_population = 0.02
pi_pulse_error = 0.005
pi_pulse_duration_ns = 40.0

[readout]
chain = "slug"
drive_freq_ghz = 8.0762
n_bar = 24.0
measurement_time_ns = 200.0
sample_dt_ns = 1.0
window_grid_ns = 5.0
filter = "boxcar"
histogram_bins = 100
"#;
