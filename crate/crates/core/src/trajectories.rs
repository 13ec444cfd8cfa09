//! Shot generation: preparation errors, qubit jump paths, cavity response and
//! amplifier noise, composed into heterodyne records.
//!
//! A record sample is `√κ·α(t_k)·√dt + n_k` where `n_k` is complex white noise with
//! per-quadrature variance `S = (2·n_noise + 1)/4`, referred to the chain input.
//! Summing `record[k]·√dt` over a window of length τ gives an integrated quadrature
//! whose noise variance is `S·τ`.

use std::ops::Range;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{CavityModel, QubitState, ReadoutPulse, StatePath};
use crate::error::{invalid, Result};
use crate::model::{AmplifierChain, DerivedParams, DeviceParams};
use crate::rng;

/// Which state the experimenter tried to prepare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intent {
    #[serde(rename = "prepare_g")]
    PrepareG,
    #[serde(rename = "prepare_e")]
    PrepareE,
}

impl Intent {
    pub const BOTH: [Intent; 2] = [Intent::PrepareG, Intent::PrepareE];

    pub fn target(self) -> QubitState {
        match self {
            Self::PrepareG => QubitState::Ground,
            Self::PrepareE => QubitState::Excited,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::PrepareG => "prepare_g",
            Self::PrepareE => "prepare_e",
        }
    }

    fn stream_offset(self) -> u64 {
        match self {
            Self::PrepareG => 0,
            Self::PrepareE => 1 << 32,
        }
    }
}

/// Passive thermal initialisation followed by an imperfect π pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreparationModel {
    /// Steady-state excited population p_th of the undriven qubit.
    pub thermal_excited_population: f64,
    /// Probability that the π pulse leaves the state unchanged.
    pub pi_pulse_error: f64,
    /// π-pulse length (s); the qubit evolves freely for this long before the flip.
    pub pi_pulse_duration: f64,
}

impl PreparationModel {
    pub fn reference() -> Self {
        Self {
            thermal_excited_population: 0.02,
            pi_pulse_error: 0.005,
            pi_pulse_duration: 40e-9,
        }
    }

    pub fn ideal() -> Self {
        Self {
            thermal_excited_population: 0.0,
            pi_pulse_error: 0.0,
            pi_pulse_duration: 40e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // p_th = 1 has no finite detailed-balance excitation rate.
        if !(0.0..1.0).contains(&self.thermal_excited_population) {
            return Err(invalid("thermal_excited_population", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.pi_pulse_error) {
            return Err(invalid("pi_pulse_error", "must lie in [0, 1]"));
        }
        if !(self.pi_pulse_duration > 0.0) || !self.pi_pulse_duration.is_finite() {
            return Err(invalid("pi_pulse_duration", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// White amplifier noise referred to the chain input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub n_noise: f64,
    /// Master seed of the shot streams.
    pub seed: u64,
    /// Noiseless records when false (an idealisation used by tests and oracles).
    pub enabled: bool,
}

impl NoiseModel {
    pub fn from_chain(chain: &AmplifierChain<f64>, seed: u64) -> Self {
        Self {
            n_noise: chain.noise_photons,
            seed,
            enabled: true,
        }
    }

    pub fn noiseless(seed: u64) -> Self {
        Self {
            n_noise: 0.0,
            seed,
            enabled: false,
        }
    }

    /// Per-quadrature spectral density (2·n_noise + 1)/4 in photon-flux units.
    pub fn spectral_density(&self) -> f64 {
        (2.0 * self.n_noise + 1.0) / 4.0
    }
}

/// Initial qubit state for a preparation intent: a thermal draw, then for
/// `PrepareE` a π flip that fails with probability `pi_pulse_error`.
pub fn sample_preparation<R: Rng + ?Sized>(intent: Intent, prep: &PreparationModel, rng: &mut R) -> QubitState {
    let thermal = if rng.random_bool(prep.thermal_excited_population) {
        QubitState::Excited
    } else {
        QubitState::Ground
    };
    apply_preparation(intent, thermal, prep, rng)
}

fn apply_preparation<R: Rng + ?Sized>(
    intent: Intent,
    state: QubitState,
    prep: &PreparationModel,
    rng: &mut R,
) -> QubitState {
    match intent {
        Intent::PrepareG => state,
        Intent::PrepareE => {
            if rng.random_bool(prep.pi_pulse_error) {
                state
            } else {
                state.flipped()
            }
        }
    }
}

/// Telegraph process with decay rate 1/t1 and excitation rate (1/t1)·p_th/(1 − p_th),
/// truncated at `duration`.
pub fn sample_jump_path<R: Rng + ?Sized>(
    initial: QubitState,
    t1: f64,
    p_th: f64,
    duration: f64,
    rng: &mut R,
) -> StatePath<f64> {
    let down = if t1.is_finite() { 1.0 / t1 } else { 0.0 };
    let up = if p_th > 0.0 { down * p_th / (1.0 - p_th) } else { 0.0 };
    let mut state = initial;
    let mut t = 0.0;
    let mut jumps = Vec::new();
    loop {
        let rate = match state {
            QubitState::Excited => down,
            QubitState::Ground => up,
        };
        if rate <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        t += wait / rate;
        if t > duration {
            break;
        }
        jumps.push(t);
        state = state.flipped();
    }
    StatePath::new(initial, jumps).expect("exponential waiting times are positive")
}

/// One element of a measurement sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Undriven free evolution (s).
    Wait(f64),
    /// Instantaneous preparation for the shot's intent (π pulse for `PrepareE`).
    Prepare,
    /// π/2 pulse followed by projection: the qubit ends in g or e with equal probability.
    Randomize,
    /// Drive the cavity and record the output.
    Measure(ReadoutPulse<f64>),
}

/// Ordered list of steps applied to every shot. The qubit starts in its thermal
/// state and evolves throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub steps: Vec<Step>,
}

impl Sequence {
    /// Preparation immediately followed by one readout.
    pub fn readout(pulse: ReadoutPulse<f64>) -> Self {
        Self {
            steps: vec![Step::Prepare, Step::Measure(pulse)],
        }
    }

    pub fn measurements(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Measure(_))).count()
    }
}

/// One simulated measurement record set.
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub index: u64,
    pub intent: Intent,
    /// True qubit trajectory over the whole sequence, time zero at the sequence start.
    pub true_path: StatePath<f64>,
    /// One heterodyne record per `Measure` step.
    pub records: Vec<Vec<Complex64>>,
    /// Start time (s) of each measurement.
    pub measure_starts: Vec<f64>,
    /// Sample spacing of each record.
    pub sample_dts: Vec<f64>,
    pub over_ncrit: bool,
    pub over_saturation: bool,
}

impl Shot {
    /// The (single or last) record; the main readout of every protocol.
    pub fn record(&self) -> &[Complex64] {
        self.records.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// In-phase samples of the last record.
    pub fn record_i(&self) -> Vec<f64> {
        self.record().iter().map(|c| c.re).collect()
    }

    /// Quadrature samples of the last record.
    pub fn record_q(&self) -> Vec<f64> {
        self.record().iter().map(|c| c.im).collect()
    }

    /// Qubit state at the start of measurement `m`.
    pub fn state_at_measurement(&self, m: usize) -> QubitState {
        self.true_path.state_at(self.measure_starts[m])
    }

    /// Qubit state `offset` seconds into measurement `m`.
    pub fn state_during_measurement(&self, m: usize, offset: f64) -> QubitState {
        self.true_path.state_at(self.measure_starts[m] + offset)
    }

    /// First jump inside measurement `m`, relative to its start.
    pub fn first_jump_in_measurement(&self, m: usize) -> Option<f64> {
        let start = self.measure_starts[m];
        let end = start + self.records[m].len() as f64 * self.sample_dts[m];
        self.true_path
            .jumps()
            .iter()
            .find(|&&j| j > start && j <= end)
            .map(|j| j - start)
    }
}

/// Sum of `record[k]·√dt` over the sample range.
pub fn integrate(record: &[Complex64], range: Range<usize>, sample_dt: f64) -> Complex64 {
    record[range].iter().sum::<Complex64>() * sample_dt.sqrt()
}

/// Shot generator bound to one physical configuration.
#[derive(Debug, Clone)]
pub struct ShotEngine {
    pub device: DeviceParams<f64>,
    pub derived: DerivedParams<f64>,
    pub prep: PreparationModel,
    pub noise: NoiseModel,
    pub chain: AmplifierChain<f64>,
}

impl ShotEngine {
    pub fn new(
        device: DeviceParams<f64>,
        derived: DerivedParams<f64>,
        prep: PreparationModel,
        noise: NoiseModel,
        chain: AmplifierChain<f64>,
    ) -> Result<Self> {
        device.validate()?;
        prep.validate()?;
        chain.validate()?;
        Ok(Self {
            device,
            derived,
            prep,
            noise,
            chain,
        })
    }

    /// Runs one shot of `sequence`, drawing every random number from `rng`.
    pub fn run_sequence<R: Rng + ?Sized>(&self, sequence: &Sequence, intent: Intent, index: u64, rng: &mut R) -> Shot {
        let p_th = self.prep.thermal_excited_population;
        let t1 = self.device.t1;
        let sigma = self.noise.spectral_density().sqrt();

        let mut state = if rng.random_bool(p_th) {
            QubitState::Excited
        } else {
            QubitState::Ground
        };
        let mut path = StatePath::constant(state);
        let mut t = 0.0;
        let mut alpha = Complex64::new(0.0, 0.0);
        let mut frame: Option<CavityModel<f64>> = None;
        let mut shot = Shot {
            index,
            intent,
            true_path: StatePath::constant(state),
            records: Vec::with_capacity(sequence.measurements()),
            measure_starts: Vec::new(),
            sample_dts: Vec::new(),
            over_ncrit: false,
            over_saturation: false,
        };

        for step in &sequence.steps {
            match step {
                Step::Wait(duration) => {
                    let segment = sample_jump_path(state, t1, p_th, *duration, rng);
                    if let Some(model) = &frame {
                        alpha = model.free_evolve(alpha, &segment, *duration);
                    }
                    path.push_shifted(&segment, t);
                    state = segment.final_state();
                    t += duration;
                }
                Step::Prepare => {
                    let next = apply_preparation(intent, state, &self.prep, rng);
                    if next != state {
                        path.push_toggle(t);
                        state = next;
                    }
                }
                Step::Randomize => {
                    let next = if rng.random_bool(0.5) {
                        QubitState::Excited
                    } else {
                        QubitState::Ground
                    };
                    if next != state {
                        path.push_toggle(t);
                        state = next;
                    }
                }
                Step::Measure(pulse) => {
                    let duration = pulse.duration();
                    let segment = sample_jump_path(state, t1, p_th, duration, rng);
                    let model = CavityModel::new(&self.device, &self.derived, pulse.drive_freq).with_chain(&self.chain);
                    let field = model.simulate_from(alpha, pulse, &segment);
                    let dt = pulse.sample_dt();
                    let signal_scale = (model.kappa_angular() * dt).sqrt();
                    let record = field
                        .samples
                        .iter()
                        .map(|a| {
                            let clean = a * signal_scale;
                            if self.noise.enabled {
                                let ni: f64 = StandardNormal.sample(rng);
                                let nq: f64 = StandardNormal.sample(rng);
                                clean + Complex64::new(ni, nq) * sigma
                            } else {
                                clean
                            }
                        })
                        .collect();
                    shot.over_ncrit |= field.over_ncrit;
                    shot.over_saturation |= field.over_saturation;
                    shot.records.push(record);
                    shot.measure_starts.push(t);
                    shot.sample_dts.push(dt);
                    alpha = field.final_amplitude().unwrap_or(alpha);
                    path.push_shifted(&segment, t);
                    state = segment.final_state();
                    t += duration;
                    frame = Some(model);
                }
            }
        }
        shot.true_path = path;
        shot
    }

    /// Generates shot `index` of batch `tag` on its own counter-based stream.
    pub fn shot(&self, sequence: &Sequence, intent: Intent, tag: u64, index: u64) -> Shot {
        let mut rng = rng::stream(self.noise.seed, tag.wrapping_add(intent.stream_offset()), index);
        self.run_sequence(sequence, intent, index, &mut rng)
    }

    /// Generates shots `indices` in parallel and maps each through `f`; output is in
    /// index order whatever the thread count.
    pub fn map_shots<T, F>(&self, sequence: &Sequence, intent: Intent, tag: u64, indices: Range<u64>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Shot) -> T + Sync + Send,
    {
        indices
            .into_par_iter()
            .map(|i| f(self.shot(sequence, intent, tag, i)))
            .collect()
    }
}

/// Single readout shot: thermal draw and π pulse, jump path over the pulse,
/// cavity response, noisy record.
#[allow(clippy::too_many_arguments)]
pub fn generate_shot<R: Rng + ?Sized>(
    intent: Intent,
    pulse: &ReadoutPulse<f64>,
    device: &DeviceParams<f64>,
    derived: &DerivedParams<f64>,
    prep: &PreparationModel,
    noise: &NoiseModel,
    chain: &AmplifierChain<f64>,
    rng: &mut R,
) -> Result<Shot> {
    pulse.check_resolution(device.cavity_linewidth_kappa)?;
    let engine = ShotEngine::new(*device, *derived, *prep, *noise, *chain)?;
    Ok(engine.run_sequence(&Sequence::readout(pulse.clone()), intent, 0, rng))
}
