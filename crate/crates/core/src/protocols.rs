//! End-to-end readout experiments on top of the shot engine: single-shot
//! fidelity, two-pulse QND correlation, post-selected initialisation and
//! randomized benchmarking.
//!
//! Every protocol draws its shots from counter-based streams keyed by the
//! configuration seed and a batch tag, so its output is a pure function of the
//! configuration. Filters are calibrated on a separate batch from the one that
//! is scored; thresholds are refitted on the scored batch.

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{calibrate_drive, CavityModel, QubitState, ReadoutPulse};
use crate::discrimination::{
    build_histogram, calibrate_matched, compute_report, fit_threshold, optimize_boxcar, Calibration,
    DiscriminationReport, FilterKind, FilterSpec, Histogram,
};
use crate::error::{invalid, Result};
use crate::fit::{fit_exponential, fit_exponential_bounded, ExpFit};
use crate::model::{derive_params, AmplifierChain, DerivedParams, DeviceParams};
use crate::rng::{self, tags};
use crate::trajectories::{Intent, NoiseModel, PreparationModel, Sequence, Shot, ShotEngine, Step};

/// Conditions worth reporting that do not stop a run. `--strict` callers treat
/// any of them as a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flag {
    /// Intracavity photon number exceeded n_crit in at least one shot.
    OverNcrit { shots: usize },
    /// Intracavity photon number exceeded the chain saturation in at least one shot.
    OverSaturation { shots: usize },
    /// The two score distributions cannot be separated.
    ZeroSeparability,
    /// Fewer than 100 conditioning events at one QND delay.
    FewConditioningEvents { delay: f64, events: usize },
    /// An exponential fit converged onto its search bound.
    FitAtBound { curve: String },
    /// More than half the post-selection shots were discarded.
    HighDiscard { fraction: f64 },
    /// The genetic search lost all diversity and stopped early.
    ZeroDiversity { generation: usize },
}

/// Readout drive and filter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutSettings {
    /// Drive frequency (Hz).
    pub drive_freq: f64,
    /// Target mean steady-state photon number (n_g + n_e)/2 of the flat pulse.
    pub n_bar: f64,
    /// Explicit main-readout envelope; replaces the flat pulse when set.
    pub envelope: Option<Vec<Complex64>>,
    /// Main readout length (s).
    pub measurement_time: f64,
    pub sample_dt: f64,
    /// Boxcar search grid (s).
    pub window_grid: f64,
    pub filter: FilterKind,
    pub histogram_bins: usize,
}

impl ReadoutSettings {
    pub fn reference() -> Self {
        Self {
            drive_freq: 8.0762e9,
            n_bar: 24.0,
            envelope: None,
            measurement_time: 200e-9,
            sample_dt: 1e-9,
            window_grid: 5e-9,
            filter: FilterKind::Boxcar,
            histogram_bins: 100,
        }
    }
}

/// Everything a protocol needs to generate and analyse shots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub device: DeviceParams<f64>,
    pub chain: AmplifierChain<f64>,
    pub preparation: PreparationModel,
    pub readout: ReadoutSettings,
    pub noise_enabled: bool,
    pub seed: u64,
    /// Shots per intent in each filter-calibration batch.
    pub calibration_shots: usize,
}

impl SimConfig {
    pub fn reference() -> Self {
        Self {
            device: DeviceParams::reference(),
            chain: AmplifierChain::slug(),
            preparation: PreparationModel::reference(),
            readout: ReadoutSettings::reference(),
            noise_enabled: true,
            seed: 0,
            calibration_shots: 5000,
        }
    }

    pub fn derived(&self) -> Result<DerivedParams<f64>> {
        derive_params(&self.device)
    }

    pub fn noise(&self) -> NoiseModel {
        if self.noise_enabled {
            NoiseModel::from_chain(&self.chain, self.seed)
        } else {
            NoiseModel::noiseless(self.seed)
        }
    }

    pub fn engine(&self) -> Result<ShotEngine> {
        ShotEngine::new(self.device, self.derived()?, self.preparation, self.noise(), self.chain)
    }

    /// Constant drive amplitude giving the configured n̄.
    pub fn drive_amplitude(&self) -> Result<f64> {
        calibrate_drive(
            self.readout.n_bar,
            &self.device,
            &self.derived()?,
            self.readout.drive_freq,
        )
    }

    /// Flat pulse of the given length at the calibrated amplitude.
    pub fn flat_pulse(&self, duration: f64) -> Result<ReadoutPulse<f64>> {
        let eps = self.drive_amplitude()?;
        let pulse = ReadoutPulse::rectangular(
            self.readout.drive_freq,
            Complex64::new(eps, 0.0),
            duration,
            self.readout.sample_dt,
        )?;
        pulse.check_resolution(self.device.cavity_linewidth_kappa)?;
        Ok(pulse)
    }

    /// Main readout pulse: the explicit envelope if given, else the flat pulse.
    pub fn readout_pulse(&self) -> Result<ReadoutPulse<f64>> {
        match &self.readout.envelope {
            Some(env) => {
                let pulse = ReadoutPulse::new(self.readout.drive_freq, env.clone(), self.readout.sample_dt)?;
                pulse.check_resolution(self.device.cavity_linewidth_kappa)?;
                Ok(pulse)
            }
            None => self.flat_pulse(self.readout.measurement_time),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.chain.validate()?;
        self.preparation.validate()?;
        let r = &self.readout;
        if !(r.n_bar >= 0.0) || !r.n_bar.is_finite() {
            return Err(invalid("n_bar", "must be finite and >= 0"));
        }
        if !(r.drive_freq > 0.0) || !r.drive_freq.is_finite() {
            return Err(invalid("drive_freq", "must be finite and > 0"));
        }
        if !(r.window_grid > 0.0) {
            return Err(invalid("window_grid", "must be > 0"));
        }
        if r.histogram_bins < 2 {
            return Err(invalid("histogram_bins", "must be >= 2"));
        }
        if self.calibration_shots == 0 {
            return Err(invalid("calibration_shots", "must be > 0"));
        }
        self.readout_pulse()?;
        Ok(())
    }
}

/// One scored shot, as exported to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotSummary {
    pub index: u64,
    pub intent: Intent,
    /// Qubit state when the scored measurement starts.
    pub initial_state: QubitState,
    /// First jump inside the scored measurement, relative to its start (s).
    pub first_jump_time: Option<f64>,
    pub score: f64,
}

fn summarize(shot: &Shot, m: usize, score: f64) -> ShotSummary {
    ShotSummary {
        index: shot.index,
        intent: shot.intent,
        initial_state: shot.state_at_measurement(m),
        first_jump_time: shot.first_jump_in_measurement(m),
        score,
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct FieldFlags {
    over_ncrit: usize,
    over_saturation: usize,
}

impl FieldFlags {
    fn add(&mut self, over_ncrit: bool, over_saturation: bool) {
        self.over_ncrit += over_ncrit as usize;
        self.over_saturation += over_saturation as usize;
    }

    fn into_flags(self, flags: &mut Vec<Flag>) {
        if self.over_ncrit > 0 {
            flags.push(Flag::OverNcrit { shots: self.over_ncrit });
        }
        if self.over_saturation > 0 {
            flags.push(Flag::OverSaturation {
                shots: self.over_saturation,
            });
        }
    }
}

fn split_intents(n_shots: usize) -> Result<u64> {
    if n_shots < 2 {
        return Err(invalid("n_shots", "need at least 2 shots"));
    }
    Ok((n_shots / 2) as u64)
}

/// Fits the configured filter on measurement `m` of `shots` fresh shots per intent.
pub fn calibrate_filter(
    config: &SimConfig,
    engine: &ShotEngine,
    sequence: &Sequence,
    m: usize,
    tag: u64,
    shots: usize,
) -> Result<Calibration<f64>> {
    let records = |intent| engine.map_shots(sequence, intent, tag, 0..shots as u64, |s| s.records[m].clone());
    let (g, e) = (records(Intent::PrepareG), records(Intent::PrepareE));
    match config.readout.filter {
        FilterKind::Boxcar => optimize_boxcar(&g, &e, config.readout.sample_dt, config.readout.window_grid),
        FilterKind::Matched => calibrate_matched(&g, &e, config.readout.sample_dt),
    }
}

/// Filter calibration for the main readout, shared by every protocol.
pub fn calibrate_readout(config: &SimConfig) -> Result<Calibration<f64>> {
    let engine = config.engine()?;
    let sequence = Sequence::readout(config.readout_pulse()?);
    calibrate_filter(
        config,
        &engine,
        &sequence,
        0,
        tags::CALIBRATION,
        config.calibration_shots,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    pub report: DiscriminationReport<f64>,
    pub histogram: Histogram<f64>,
    pub calibration: Calibration<f64>,
    pub shots: Vec<ShotSummary>,
    pub flags: Vec<Flag>,
}

/// Scores `n_shots / 2` shots per intent of `sequence` (measurement `m`) with `filter`.
fn score_batch(
    engine: &ShotEngine,
    sequence: &Sequence,
    m: usize,
    filter: &FilterSpec<f64>,
    tag: u64,
    per_intent: u64,
) -> Result<(Vec<ShotSummary>, FieldFlags)> {
    let mut summaries = Vec::with_capacity(2 * per_intent as usize);
    let mut field = FieldFlags::default();
    for intent in Intent::BOTH {
        let scored = engine.map_shots(sequence, intent, tag, 0..per_intent, |shot| {
            let score = crate::discrimination::apply_filter(&shot.records[m], filter);
            (
                score.map(|s| summarize(&shot, m, s)),
                shot.over_ncrit,
                shot.over_saturation,
            )
        });
        for (summary, ncrit, sat) in scored {
            summaries.push(summary?);
            field.add(ncrit, sat);
        }
    }
    Ok((summaries, field))
}

fn scores_of(shots: &[ShotSummary], intent: Intent) -> Vec<f64> {
    shots.iter().filter(|s| s.intent == intent).map(|s| s.score).collect()
}

fn report_and_histogram(
    g: &[f64],
    e: &[f64],
    bins: usize,
    flags: &mut Vec<Flag>,
) -> Result<(DiscriminationReport<f64>, Histogram<f64>)> {
    let threshold = fit_threshold(g, e)?;
    if threshold.zero_separability {
        flags.push(Flag::ZeroSeparability);
    }
    Ok((compute_report(g, e, threshold.value)?, build_histogram(g, e, bins)?))
}

/// Single-shot fidelity of the configured readout over `n_shots` shots split
/// evenly between the two intents.
pub fn run_fidelity(config: &SimConfig, n_shots: usize) -> Result<FidelityResult> {
    config.validate()?;
    let per_intent = split_intents(n_shots)?;
    let engine = config.engine()?;
    let sequence = Sequence::readout(config.readout_pulse()?);
    let calibration = calibrate_filter(
        config,
        &engine,
        &sequence,
        0,
        tags::CALIBRATION,
        config.calibration_shots,
    )?;
    let (shots, field) = score_batch(&engine, &sequence, 0, &calibration.filter, tags::MAIN, per_intent)?;

    let mut flags = Vec::new();
    field.into_flags(&mut flags);
    let (g, e) = (scores_of(&shots, Intent::PrepareG), scores_of(&shots, Intent::PrepareE));
    let (report, histogram) = report_and_histogram(&g, &e, config.readout.histogram_bins, &mut flags)?;
    Ok(FidelityResult {
        report,
        histogram,
        calibration,
        shots,
        flags,
    })
}

/// Measured and predicted SNR of the flat readout in its steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadySnr {
    pub report: DiscriminationReport<f64>,
    /// √κ·|α_e − α_g|·√τ/√(2·n_noise + 1).
    pub predicted: f64,
    pub standard_error: f64,
}

/// SNR of a full-length boxcar on a cavity already rung up to its steady state,
/// with the qubit frozen (no decay, no thermal population, perfect π pulse).
///
/// This isolates the pointer-state separation from preparation and relaxation
/// errors, which add non-Gaussian tails to the score distributions.
pub fn steady_state_snr(config: &SimConfig, n_shots: usize) -> Result<SteadySnr> {
    let mut frozen = config.clone();
    frozen.device.t1 = f64::INFINITY;
    frozen.preparation.thermal_excited_population = 0.0;
    frozen.preparation.pi_pulse_error = 0.0;
    frozen.validate()?;
    let per_intent = split_intents(n_shots)?;

    let tau = frozen.readout.measurement_time;
    let ring_up = 500e-9;
    let sequence = Sequence {
        steps: vec![
            Step::Prepare,
            Step::Measure(frozen.flat_pulse(ring_up)?),
            Step::Measure(frozen.flat_pulse(tau)?),
        ],
    };
    let derived = frozen.derived()?;
    let model = CavityModel::new(&frozen.device, &derived, frozen.readout.drive_freq);
    let drive = Complex64::new(frozen.drive_amplitude()?, 0.0);
    let separation = model.steady_state(drive, QubitState::Excited) - model.steady_state(drive, QubitState::Ground);
    let n_samples = (tau / frozen.readout.sample_dt).round();
    let filter = FilterSpec::boxcar(
        0.0,
        n_samples * frozen.readout.sample_dt,
        separation.arg(),
        frozen.readout.sample_dt,
    );

    let engine = frozen.engine()?;
    let (shots, _) = score_batch(&engine, &sequence, 1, &filter, tags::MAIN, per_intent)?;
    let (g, e) = (scores_of(&shots, Intent::PrepareG), scores_of(&shots, Intent::PrepareE));
    let threshold = fit_threshold(&g, &e)?;
    let report = compute_report(&g, &e, threshold.value)?;
    let predicted =
        (model.kappa_angular() * tau).sqrt() * separation.norm() / (2.0 * frozen.chain.noise_photons + 1.0).sqrt();
    Ok(SteadySnr {
        standard_error: report.snr_standard_error(),
        report,
        predicted,
    })
}

/// Thermal population calibration: the p_th whose simulated ground-state error
/// matches `target_error_g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalCalibration {
    pub thermal_excited_population: f64,
    pub error_g: f64,
    pub iterations: usize,
}

/// Secant search on p_th using [`run_fidelity`] at `n_shots`. Stops when ε_g is
/// within `tolerance` of the target or after eight iterations.
pub fn calibrate_thermal_population(
    config: &SimConfig,
    target_error_g: f64,
    n_shots: usize,
    tolerance: f64,
) -> Result<ThermalCalibration> {
    if !(0.0..0.5).contains(&target_error_g) {
        return Err(invalid("target_error_g", "must lie in [0, 0.5)"));
    }
    let error_at = |p: f64| -> Result<f64> {
        let mut c = config.clone();
        c.preparation.thermal_excited_population = p;
        Ok(run_fidelity(&c, n_shots)?.report.error_g)
    };
    let clamp = |p: f64| p.clamp(0.0, 0.5);
    let (mut p0, mut p1) = (0.0, clamp(config.preparation.thermal_excited_population.max(0.01)));
    let (mut e0, mut e1) = (error_at(p0)?, error_at(p1)?);
    let mut iterations = 2;
    while (e1 - target_error_g).abs() > tolerance && iterations < 8 {
        let slope = (e1 - e0) / (p1 - p0);
        let next = if slope > 0.0 {
            clamp(p1 + (target_error_g - e1) / slope)
        } else {
            clamp(p1 + 0.01)
        };
        if next == p1 {
            break;
        }
        (p0, e0) = (p1, e1);
        p1 = next;
        e1 = error_at(p1)?;
        iterations += 1;
    }
    Ok(ThermalCalibration {
        thermal_excited_population: p1,
        error_g: e1,
        iterations,
    })
}

/// Conditional probabilities of two consecutive readouts against their separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QndResult {
    /// End of the first pulse to start of the second (s).
    pub delays: Vec<f64>,
    /// P(second reads g | first reads g).
    pub p_gg: Vec<f64>,
    /// P(second reads e | first reads e).
    pub p_ee: Vec<f64>,
    /// Shots whose first readout gave g and e.
    pub events_g: Vec<usize>,
    pub events_e: Vec<usize>,
    /// The same conditionals on the true qubit state at each window midpoint,
    /// which strips out readout error and leaves relaxation and excitation.
    pub true_p_gg: Vec<f64>,
    pub true_p_ee: Vec<f64>,
    pub fit_gg: ExpFit<f64>,
    pub fit_ee: ExpFit<f64>,
    pub calibration: Calibration<f64>,
    pub flags: Vec<Flag>,
}

/// Delays used when none are given: 0 to 10 μs.
pub fn default_qnd_delays() -> Vec<f64> {
    [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.5, 8.0, 10.0]
        .iter()
        .map(|d| d / 1e6)
        .collect()
}

fn ratio(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Two readouts after a π/2 pulse, repeated for every delay with `n_shots` each.
pub fn run_qnd(config: &SimConfig, delays: &[f64], n_shots: usize) -> Result<QndResult> {
    config.validate()?;
    if delays.len() < 4 {
        return Err(invalid("delays", "need at least 4 delays for the exponential fit"));
    }
    if delays.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) || delays.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("delays", "must be finite, non-negative and strictly ascending"));
    }
    if n_shots == 0 {
        return Err(invalid("n_shots", "must be > 0"));
    }
    let engine = config.engine()?;
    let pulse = config.readout_pulse()?;
    let calibration = calibrate_filter(
        config,
        &engine,
        &Sequence::readout(pulse.clone()),
        0,
        tags::CALIBRATION,
        config.calibration_shots,
    )?;
    let mid = pulse.duration() / 2.0;

    let mut out = QndResult {
        delays: delays.to_vec(),
        p_gg: Vec::new(),
        p_ee: Vec::new(),
        events_g: Vec::new(),
        events_e: Vec::new(),
        true_p_gg: Vec::new(),
        true_p_ee: Vec::new(),
        fit_gg: ExpFit::default(),
        fit_ee: ExpFit::default(),
        calibration,
        flags: Vec::new(),
    };
    let mut field = FieldFlags::default();
    for (k, &delay) in delays.iter().enumerate() {
        let mut steps = vec![Step::Randomize, Step::Measure(pulse.clone())];
        if delay > 0.0 {
            steps.push(Step::Wait(delay));
        }
        steps.push(Step::Measure(pulse.clone()));
        let sequence = Sequence { steps };
        let tag = tags::QND ^ ((k as u64) << 40);
        let cal = &out.calibration;
        let outcomes = engine.map_shots(&sequence, Intent::PrepareG, tag, 0..n_shots as u64, |shot| {
            let first = cal.reads_excited(&shot.records[0]);
            let second = cal.reads_excited(&shot.records[1]);
            let truth = (
                shot.state_during_measurement(0, mid) == QubitState::Excited,
                shot.state_during_measurement(1, mid) == QubitState::Excited,
            );
            (first, second, truth, shot.over_ncrit, shot.over_saturation)
        });
        let mut counts = [[0usize; 2]; 2];
        let mut truth_counts = [[0usize; 2]; 2];
        for (first, second, (t1, t2), ncrit, sat) in outcomes {
            counts[first? as usize][second? as usize] += 1;
            truth_counts[t1 as usize][t2 as usize] += 1;
            field.add(ncrit, sat);
        }
        let (ng, ne) = (counts[0][0] + counts[0][1], counts[1][0] + counts[1][1]);
        out.events_g.push(ng);
        out.events_e.push(ne);
        out.p_gg.push(ratio(counts[0][0], ng));
        out.p_ee.push(ratio(counts[1][1], ne));
        out.true_p_gg
            .push(ratio(truth_counts[0][0], truth_counts[0][0] + truth_counts[0][1]));
        out.true_p_ee
            .push(ratio(truth_counts[1][1], truth_counts[1][0] + truth_counts[1][1]));
        let events = ng.min(ne);
        if events < 100 {
            out.flags.push(Flag::FewConditioningEvents { delay, events });
        }
    }
    field.into_flags(&mut out.flags);
    out.fit_gg = fit_exponential(delays, &out.p_gg)?;
    out.fit_ee = fit_exponential(delays, &out.p_ee)?;
    for (name, fit) in [("p_gg", &out.fit_gg), ("p_ee", &out.fit_ee)] {
        if fit.at_bound {
            out.flags.push(Flag::FitAtBound { curve: name.into() });
        }
    }
    Ok(out)
}

/// Timing of the heralding readout that precedes the main one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostSelectionTiming {
    pub pre_measurement: f64,
    /// Idle time letting the cavity empty before the π pulse.
    pub wait: f64,
}

impl Default for PostSelectionTiming {
    fn default() -> Self {
        Self {
            pre_measurement: 320e-9,
            wait: 300e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSelectionResult {
    pub raw: DiscriminationReport<f64>,
    pub selected: DiscriminationReport<f64>,
    pub discard_fraction: f64,
    pub histogram_raw: Histogram<f64>,
    pub histogram_selected: Histogram<f64>,
    pub pre_calibration: Calibration<f64>,
    pub calibration: Calibration<f64>,
    pub timing: PostSelectionTiming,
    pub flags: Vec<Flag>,
}

/// Heralded initialisation: a pre-measurement, a wait, the π pulse for the
/// intent and the main readout. Shots whose pre-measurement reads e are dropped.
pub fn run_postselection(
    config: &SimConfig,
    n_shots: usize,
    timing: PostSelectionTiming,
) -> Result<PostSelectionResult> {
    config.validate()?;
    if !(timing.wait >= 0.0) || !(timing.pre_measurement > 0.0) {
        return Err(invalid("timing", "pre-measurement must be > 0 and wait >= 0"));
    }
    let per_intent = split_intents(n_shots)?;
    let engine = config.engine()?;
    let pre_pulse = config.flat_pulse(timing.pre_measurement)?;
    let pulse = config.readout_pulse()?;
    let pre_calibration = calibrate_filter(
        config,
        &engine,
        &Sequence::readout(pre_pulse.clone()),
        0,
        tags::PRE_CALIBRATION,
        config.calibration_shots,
    )?;
    let calibration = calibrate_filter(
        config,
        &engine,
        &Sequence::readout(pulse.clone()),
        0,
        tags::CALIBRATION,
        config.calibration_shots,
    )?;

    let sequence = Sequence {
        steps: vec![
            Step::Measure(pre_pulse),
            Step::Wait(timing.wait + config.preparation.pi_pulse_duration),
            Step::Prepare,
            Step::Measure(pulse),
        ],
    };
    let mut field = FieldFlags::default();
    let mut raw = [Vec::new(), Vec::new()];
    let mut kept = [Vec::new(), Vec::new()];
    for (i, intent) in Intent::BOTH.into_iter().enumerate() {
        let scored = engine.map_shots(&sequence, intent, tags::POSTSELECT, 0..per_intent, |shot| {
            let herald = pre_calibration.reads_excited(&shot.records[0]);
            let score = calibration.score(&shot.records[1]);
            (herald, score, shot.over_ncrit, shot.over_saturation)
        });
        for (herald, score, ncrit, sat) in scored {
            let score = score?;
            raw[i].push(score);
            if !herald? {
                kept[i].push(score);
            }
            field.add(ncrit, sat);
        }
    }
    let mut flags = Vec::new();
    field.into_flags(&mut flags);
    let total = raw[0].len() + raw[1].len();
    let discard_fraction = 1.0 - (kept[0].len() + kept[1].len()) as f64 / total as f64;
    if discard_fraction > 0.5 {
        flags.push(Flag::HighDiscard {
            fraction: discard_fraction,
        });
    }
    if kept[0].is_empty() || kept[1].is_empty() {
        return Err(crate::error::Error::Empty("every shot of one intent was discarded"));
    }
    let bins = config.readout.histogram_bins;
    let (raw_report, histogram_raw) = report_and_histogram(&raw[0], &raw[1], bins, &mut flags)?;
    let (selected, histogram_selected) = report_and_histogram(&kept[0], &kept[1], bins, &mut flags)?;
    flags.dedup();
    Ok(PostSelectionResult {
        raw: raw_report,
        selected,
        discard_fraction,
        histogram_raw,
        histogram_selected,
        pre_calibration,
        calibration,
        timing,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbResult {
    pub sequence_lengths: Vec<usize>,
    pub survival: Vec<f64>,
    /// (1 − p)/2.
    pub fitted_error_per_gate: f64,
    /// Survival model A·p^m + B.
    pub a: f64,
    pub p: f64,
    pub b: f64,
    pub flags: Vec<Flag>,
}

/// Sequence lengths used when none are given.
pub fn default_rb_lengths() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32, 64, 128, 256]
}

/// Abstract single-qubit RB: every gate flips the qubit independently with
/// probability `gate_error`, so a sequence survives when the number of flips is
/// even. Each of the `n_seq` random sequences per length is measured
/// `shots_per_seq` times.
pub fn run_rb(
    gate_error: f64,
    sequence_lengths: &[usize],
    n_seq: usize,
    shots_per_seq: usize,
    seed: u64,
) -> Result<RbResult> {
    if !(0.0..=0.5).contains(&gate_error) {
        return Err(invalid("gate_error", "must lie in [0, 0.5]"));
    }
    if sequence_lengths.len() < 4 || sequence_lengths.windows(2).any(|w| w[1] <= w[0]) || sequence_lengths[0] == 0 {
        return Err(invalid(
            "sequence_lengths",
            "need at least 4 strictly ascending positive lengths",
        ));
    }
    if n_seq == 0 || shots_per_seq == 0 {
        return Err(invalid("n_seq", "sequence and shot counts must be > 0"));
    }
    let per_length = (n_seq * shots_per_seq) as f64;
    let survival: Vec<f64> = sequence_lengths
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let flips = Binomial::new(m as u64, gate_error).expect("gate error lies in [0, 1]");
            let survived: usize = (0..n_seq as u64)
                .into_par_iter()
                .map(|s| {
                    let mut rng = rng::stream(seed, tags::RB ^ ((k as u64) << 40), s);
                    (0..shots_per_seq).filter(|_| flips.sample(&mut rng) % 2 == 0).count()
                })
                .sum();
            survived as f64 / per_length
        })
        .collect();

    let x: Vec<f64> = sequence_lengths.iter().map(|&m| m as f64).collect();
    let tau_min = 0.05;
    let tau_max = 1e3 * x[x.len() - 1];
    let fit = fit_exponential_bounded(&x, &survival, tau_min, tau_max)?;
    let p_of = |tau: f64| (-1.0 / tau).exp();
    let mean = survival.iter().sum::<f64>() / survival.len() as f64;

    // Decay amplitude visible over the measured lengths, against the binomial
    // scatter of one survival estimate.
    let visible = (fit.eval(x[0]) - fit.eval(x[x.len() - 1])).abs();
    let sigma = (0.25 / per_length).sqrt();
    let mut flags = Vec::new();
    let (a, p, b) = if visible < 3.0 * sigma {
        if mean > 0.75 {
            (0.0, 1.0, mean)
        } else {
            (0.0, p_of(tau_min), mean)
        }
    } else {
        if fit.at_bound {
            flags.push(Flag::FitAtBound { curve: "rb".into() });
        }
        (fit.amplitude, p_of(fit.decay_time), fit.offset)
    };
    Ok(RbResult {
        sequence_lengths: sequence_lengths.to_vec(),
        survival,
        fitted_error_per_gate: (1.0 - p) / 2.0,
        a,
        p,
        b,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal(noise: bool) -> SimConfig {
        let mut c = SimConfig::reference();
        c.device.t1 = f64::INFINITY;
        c.preparation = PreparationModel::ideal();
        c.noise_enabled = noise;
        c.calibration_shots = 500;
        c
    }

    fn binomial_sigma(p: f64, n: usize) -> f64 {
        (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn noiseless_ideal_readout_is_perfect() {
        let r = run_fidelity(&ideal(false), 400).unwrap();
        assert_eq!(r.report.fidelity, 1.0);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn frozen_qubit_reaches_gaussian_fidelity() {
        // Chain noise lowered until the steady-state SNR is 3.3.
        let mut c = ideal(true);
        c.calibration_shots = 4000;
        let snr = steady_state_snr(&c, 2000).unwrap().predicted;
        c.chain.noise_photons = ((2.0 * c.chain.noise_photons + 1.0) * (snr / 3.3).powi(2) - 1.0) / 2.0;
        assert!((steady_state_snr(&c, 2000).unwrap().predicted - 3.3).abs() < 1e-9);
        let r = run_fidelity(&c, 20_000).unwrap();
        assert!(r.report.fidelity >= 0.995, "{}", r.report.fidelity);
    }

    #[test]
    fn fidelity_is_deterministic_at_any_thread_count() {
        let mut c = SimConfig::reference();
        c.calibration_shots = 300;
        c.seed = 11;
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_fidelity(&c, 600).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run_fidelity(&c, 600).unwrap());
        c.seed = 12;
        assert_ne!(one.report, run_fidelity(&c, 600).unwrap().report);
    }

    #[test]
    fn shot_summaries_are_ordered_by_intent_and_index() {
        let mut c = SimConfig::reference();
        c.calibration_shots = 200;
        let r = run_fidelity(&c, 100).unwrap();
        assert_eq!(r.shots.len(), 100);
        assert!(r.shots[..50]
            .iter()
            .enumerate()
            .all(|(i, s)| s.intent == Intent::PrepareG && s.index == i as u64));
        assert!(r.shots[50..].iter().all(|s| s.intent == Intent::PrepareE));
        assert_eq!(r.histogram.counts_g.iter().sum::<u64>(), 50);
    }

    #[test]
    fn steady_snr_matches_pointer_separation() {
        let mut c = SimConfig::reference();
        c.seed = 3;
        let s = steady_state_snr(&c, 20_000).unwrap();
        assert!((s.report.snr_meas - s.predicted).abs() < 3.0 * s.standard_error);
    }

    #[test]
    fn thermal_calibration_hits_target_without_noise() {
        let mut c = SimConfig::reference();
        c.noise_enabled = false;
        c.calibration_shots = 300;
        let cal = calibrate_thermal_population(&c, 0.03, 6000, 0.002).unwrap();
        assert!((cal.error_g - 0.03).abs() <= 0.002, "{cal:?}");
        assert!((cal.thermal_excited_population - 0.03).abs() < 0.01);
    }

    #[test]
    fn qnd_is_perfect_without_decay_or_noise() {
        let r = run_qnd(&ideal(false), &[0.0, 1e-6, 2e-6, 3e-6], 400).unwrap();
        assert!(
            r.p_gg.iter().chain(&r.p_ee).all(|&p| p == 1.0),
            "{:?} {:?}",
            r.p_gg,
            r.p_ee
        );
        assert!(r.true_p_ee.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn back_to_back_excited_survival_is_one_window_of_decay() {
        let mut c = SimConfig::reference();
        c.noise_enabled = false;
        c.preparation.thermal_excited_population = 0.0;
        c.calibration_shots = 300;
        let n = 20_000;
        let r = run_qnd(&c, &[0.0, 1e-6, 2e-6, 4e-6], n).unwrap();
        let expected = (-c.readout.measurement_time / c.device.t1).exp();
        let events = n / 2;
        assert!((r.true_p_ee[0] - expected).abs() < 3.0 * binomial_sigma(expected, events));
        assert_eq!(r.true_p_gg[0], 1.0);
    }

    #[test]
    fn qnd_rejects_bad_delays() {
        let c = SimConfig::reference();
        assert!(run_qnd(&c, &[0.0, 1e-6, 2e-6], 10).is_err());
        assert!(run_qnd(&c, &[0.0, 2e-6, 1e-6, 3e-6], 10).is_err());
        assert!(run_qnd(&c, &[-1e-6, 0.0, 1e-6, 2e-6], 10).is_err());
    }

    #[test]
    fn postselection_without_thermal_population_changes_little() {
        let mut c = SimConfig::reference();
        c.preparation.thermal_excited_population = 0.0;
        c.calibration_shots = 3000;
        let r = run_postselection(&c, 40_000, PostSelectionTiming::default()).unwrap();
        assert!(
            (r.selected.fidelity - r.raw.fidelity).abs() < 0.003,
            "{} {}",
            r.raw.fidelity,
            r.selected.fidelity
        );
        assert!(r.discard_fraction < 0.05);
    }

    #[test]
    fn postselection_does_not_raise_ground_error() {
        for seed in 0..3 {
            let mut c = SimConfig::reference();
            c.seed = seed;
            c.calibration_shots = 2000;
            let r = run_postselection(&c, 10_000, PostSelectionTiming::default()).unwrap();
            let sigma = binomial_sigma(r.raw.error_g, r.raw.count_g);
            assert!(r.selected.error_g <= r.raw.error_g + 3.0 * sigma);
        }
    }

    #[test]
    fn protocols_reject_too_few_shots() {
        let c = SimConfig::reference();
        assert!(run_fidelity(&c, 1).is_err());
        assert!(run_postselection(&c, 1, PostSelectionTiming::default()).is_err());
    }

    #[test]
    fn rb_limits() {
        let lengths = default_rb_lengths();
        let clean = run_rb(0.0, &lengths, 5, 100, 1).unwrap();
        assert_eq!(clean.p, 1.0);
        assert!(clean.survival.iter().all(|&s| s == 1.0));
        assert_eq!(clean.fitted_error_per_gate, 0.0);

        let random = run_rb(0.5, &lengths, 20, 500, 1).unwrap();
        assert!(random.p < 0.05, "{}", random.p);
        assert!(random.survival.iter().all(|&s| (s - 0.5).abs() < 0.02));
    }

    #[test]
    fn rb_recovers_injected_error() {
        let r = run_rb(0.005, &default_rb_lengths(), 50, 500, 2).unwrap();
        assert!(
            (r.fitted_error_per_gate - 0.005).abs() < 0.0005,
            "{}",
            r.fitted_error_per_gate
        );
    }

    #[test]
    fn rb_survival_decreases_on_average() {
        let lengths = default_rb_lengths();
        let mut mean = vec![0.0; lengths.len()];
        for seed in 0..10 {
            let r = run_rb(0.01, &lengths, 10, 100, seed).unwrap();
            for (m, s) in mean.iter_mut().zip(&r.survival) {
                *m += s / 10.0;
            }
        }
        assert!(mean.windows(2).all(|w| w[1] <= w[0]), "{mean:?}");
    }

    #[test]
    fn rb_rejects_bad_input() {
        assert!(run_rb(0.6, &default_rb_lengths(), 1, 1, 0).is_err());
        assert!(run_rb(0.01, &[1, 2, 3], 1, 1, 0).is_err());
        assert!(run_rb(0.01, &[1, 4, 2, 8], 1, 1, 0).is_err());
    }
}
