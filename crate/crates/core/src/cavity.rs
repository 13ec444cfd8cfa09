//! Qubit-state-conditioned cavity field under an arbitrary drive envelope.
//!
//! In the frame rotating at the drive frequency the intracavity amplitude obeys
//!
//! ```text
//! dα/dt = −[i(δ + χ_s) + κ/2]·α − i·ε(t),     δ = 2π(ω_c − ω_read)
//! ```
//!
//! where χ_s is the angular cavity pull for the instantaneous qubit state `s` and κ
//! is the angular energy decay rate. The right-hand side is linear with piecewise
//! constant coefficients (the envelope is held over each sample, the qubit state
//! changes only at jump times), so every sub-interval is propagated in closed form.
//! The field is continuous across qubit jumps.

use std::io::{self, Write};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{AmplifierChain, DerivedParams, DeviceParams};
use crate::scalar::Scalar;

/// Computational basis state of the qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QubitState {
    #[serde(rename = "g")]
    Ground,
    #[serde(rename = "e")]
    Excited,
}

impl QubitState {
    pub fn flipped(self) -> Self {
        match self {
            Self::Ground => Self::Excited,
            Self::Excited => Self::Ground,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Ground => "g",
            Self::Excited => "e",
        }
    }
}

/// Uniformly sampled complex drive envelope ε(t) in √photons/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutPulse<T> {
    /// Drive (and demodulation) frequency in Hz.
    pub drive_freq: T,
    envelope: Vec<Complex<T>>,
    sample_dt: T,
}

impl<T: Scalar> ReadoutPulse<T> {
    pub fn new(drive_freq: T, envelope: Vec<Complex<T>>, sample_dt: T) -> Result<Self> {
        if !(drive_freq > T::zero()) || !drive_freq.is_finite() {
            return Err(invalid("drive_freq", "must be finite and > 0"));
        }
        if !(sample_dt > T::zero()) || !sample_dt.is_finite() {
            return Err(invalid("sample_dt", "must be finite and > 0"));
        }
        if envelope.iter().any(|e| !e.re.is_finite() || !e.im.is_finite()) {
            return Err(invalid("envelope", "samples must be finite"));
        }
        Ok(Self {
            drive_freq,
            envelope,
            sample_dt,
        })
    }

    /// Constant envelope of the given amplitude, `duration` rounded to whole samples.
    pub fn rectangular(drive_freq: T, amplitude: Complex<T>, duration: T, sample_dt: T) -> Result<Self> {
        let samples = samples_in(duration, sample_dt)?;
        Self::new(drive_freq, vec![amplitude; samples], sample_dt)
    }

    /// Piecewise-constant envelope: `segments` spread evenly over `samples` samples.
    pub fn piecewise(drive_freq: T, segments: &[Complex<T>], samples: usize, sample_dt: T) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Empty("envelope segments"));
        }
        let envelope = (0..samples)
            .map(|k| segments[k * segments.len() / samples.max(1)])
            .collect();
        Self::new(drive_freq, envelope, sample_dt)
    }

    pub fn envelope(&self) -> &[Complex<T>] {
        &self.envelope
    }

    pub fn sample_dt(&self) -> T {
        self.sample_dt
    }

    pub fn len(&self) -> usize {
        self.envelope.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelope.is_empty()
    }

    pub fn duration(&self) -> T {
        T::count(self.envelope.len()) * self.sample_dt
    }

    /// Requires `sample_dt ≤ 1/(20·κ)` so the cavity response is resolved.
    pub fn check_resolution(&self, kappa: T) -> Result<()> {
        if self.sample_dt > T::one() / (T::lit(20.0) * kappa) {
            return Err(invalid(
                "sample_dt",
                format!(
                    "{} s does not resolve κ = {} Hz (need <= 1/(20κ))",
                    self.sample_dt, kappa
                ),
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            drive_freq: self.drive_freq,
            envelope: self.envelope.iter().map(|e| e * factor).collect(),
            sample_dt: self.sample_dt,
        }
    }
}

pub(crate) fn samples_in<T: Scalar>(duration: T, sample_dt: T) -> Result<usize> {
    if !(duration >= T::zero()) || !duration.is_finite() {
        return Err(invalid("duration", "must be finite and >= 0"));
    }
    if !(sample_dt > T::zero()) {
        return Err(invalid("sample_dt", "must be > 0"));
    }
    (duration / sample_dt)
        .round()
        .to_usize()
        .ok_or_else(|| invalid("duration", "too many samples"))
}

/// Qubit trajectory: an initial state and the times (s) at which it toggles.
///
/// Jumps alternate in direction by construction; whether a given toggle is a decay
/// or an excitation follows from the state just before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePath<T> {
    pub initial: QubitState,
    jumps: Vec<T>,
}

impl<T: Scalar> StatePath<T> {
    pub fn constant(initial: QubitState) -> Self {
        Self {
            initial,
            jumps: Vec::new(),
        }
    }

    pub fn new(initial: QubitState, jumps: Vec<T>) -> Result<Self> {
        if jumps.iter().any(|t| !t.is_finite() || *t < T::zero()) {
            return Err(Error::InvalidPath("jump times must be finite and >= 0".into()));
        }
        if jumps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPath("jump times must be strictly ascending".into()));
        }
        Ok(Self { initial, jumps })
    }

    pub fn jumps(&self) -> &[T] {
        &self.jumps
    }

    pub fn validate_within(&self, duration: T) -> Result<()> {
        match self.jumps.last() {
            Some(&last) if last > duration => Err(Error::InvalidPath(format!(
                "jump at {last} s lies beyond the duration {duration} s"
            ))),
            _ => Ok(()),
        }
    }

    /// State at time `t`; a jump at exactly `t` has already happened.
    pub fn state_at(&self, t: T) -> QubitState {
        let toggles = self.jumps.partition_point(|&j| j <= t);
        if toggles % 2 == 0 {
            self.initial
        } else {
            self.initial.flipped()
        }
    }

    pub fn final_state(&self) -> QubitState {
        if self.jumps.len().is_multiple_of(2) {
            self.initial
        } else {
            self.initial.flipped()
        }
    }

    /// Sub-path on `[start, end]`, re-referenced so that `start` becomes time zero.
    pub fn window(&self, start: T, end: T) -> Self {
        let initial = self.state_at(start);
        let jumps = self
            .jumps
            .iter()
            .filter(|&&j| j > start && j <= end)
            .map(|&j| j - start)
            .collect();
        Self { initial, jumps }
    }

    /// Appends a toggle at time `t`. A toggle at the time of the previous one
    /// cancels it.
    pub(crate) fn push_toggle(&mut self, t: T) {
        match self.jumps.last() {
            Some(&last) if last == t => {
                self.jumps.pop();
            }
            Some(&last) if last > t => panic!("toggle at {t} precedes previous toggle at {last}"),
            _ => self.jumps.push(t),
        }
    }

    pub(crate) fn push_shifted(&mut self, other: &StatePath<T>, offset: T) {
        for &j in &other.jumps {
            self.push_toggle(j + offset);
        }
    }
}

/// Sampled cavity amplitude; `samples[k]` is α at the end of sample interval `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTrajectory<T> {
    pub samples: Vec<Complex<T>>,
    pub sample_dt: T,
    /// Largest |α|² reached, including the initial amplitude.
    pub max_photons: T,
    pub over_ncrit: bool,
    pub over_saturation: bool,
}

impl<T: Scalar> FieldTrajectory<T> {
    pub fn photon_numbers(&self) -> impl Iterator<Item = T> + '_ {
        self.samples.iter().map(|a| a.norm_sqr())
    }

    pub fn final_amplitude(&self) -> Option<Complex<T>> {
        self.samples.last().copied()
    }

    /// Writes `t,re_alpha,im_alpha` rows, `t` at the end of each sample interval.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,re_alpha,im_alpha")?;
        for (k, a) in self.samples.iter().enumerate() {
            let t = T::count(k + 1) * self.sample_dt;
            writeln!(out, "{},{},{}", t, a.re, a.im)?;
        }
        Ok(())
    }
}

/// `(1 − e^{−x})/x`, finite at `x = 0`.
fn phi1<T: Scalar>(x: Complex<T>) -> Complex<T> {
    if x.norm() < T::lit(1e-4) {
        let one = Complex::new(T::one(), T::zero());
        one - x * (one / T::lit(2.0) - x * (one / T::lit(6.0) - x / T::lit(24.0)))
    } else {
        (Complex::new(T::one(), T::zero()) - (-x).exp()) / x
    }
}

/// Propagator over one interval of constant coefficients:
/// α(h) = a·α(0) + b·ε.
#[derive(Debug, Clone, Copy)]
struct Step<T> {
    a: Complex<T>,
    b: Complex<T>,
}

impl<T: Scalar> Step<T> {
    fn new(rate: Complex<T>, h: T) -> Self {
        let x = rate * h;
        let minus_i = Complex::new(T::zero(), -T::one());
        Self {
            a: (-x).exp(),
            b: minus_i * phi1(x) * h,
        }
    }

    fn apply(&self, alpha: Complex<T>, drive: Complex<T>) -> Complex<T> {
        self.a * alpha + self.b * drive
    }
}

/// Linear cavity response for one drive frequency, with both pointer-state rates
/// precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityModel<T> {
    rate_ground: Complex<T>,
    rate_excited: Complex<T>,
    kappa_ang: T,
    n_crit: T,
    saturation_photons: Option<T>,
}

impl<T: Scalar> CavityModel<T> {
    pub fn new(device: &DeviceParams<T>, derived: &DerivedParams<T>, drive_freq: T) -> Self {
        use crate::cavity::QubitState::{Excited, Ground};
        let tau = T::TAU();
        let delta = tau * (device.cavity_freq - drive_freq);
        let half_kappa = tau * device.cavity_linewidth_kappa / T::lit(2.0);
        let rate = |s| Complex::new(half_kappa, delta + tau * derived.cavity_shift(s, device));
        Self {
            rate_ground: rate(Ground),
            rate_excited: rate(Excited),
            kappa_ang: tau * device.cavity_linewidth_kappa,
            n_crit: derived.n_crit,
            saturation_photons: None,
        }
    }

    pub fn with_chain(mut self, chain: &AmplifierChain<T>) -> Self {
        self.saturation_photons = Some(chain.saturation_photons);
        self
    }

    /// Complex decay rate i(δ + χ_s) + κ/2 in rad/s.
    pub fn rate(&self, state: QubitState) -> Complex<T> {
        match state {
            QubitState::Ground => self.rate_ground,
            QubitState::Excited => self.rate_excited,
        }
    }

    /// Angular energy decay rate 2πκ.
    pub fn kappa_angular(&self) -> T {
        self.kappa_ang
    }

    pub fn n_crit(&self) -> T {
        self.n_crit
    }

    /// Steady state −iε/(i(δ + χ_s) + κ/2) under a constant drive.
    pub fn steady_state(&self, drive: Complex<T>, state: QubitState) -> Complex<T> {
        Complex::new(T::zero(), -T::one()) * drive / self.rate(state)
    }

    /// Mean steady-state photon number (n_g + n_e)/2 for a constant drive.
    pub fn mean_steady_photons(&self, drive: Complex<T>) -> T {
        let ng = self.steady_state(drive, QubitState::Ground).norm_sqr();
        let ne = self.steady_state(drive, QubitState::Excited).norm_sqr();
        (ng + ne) / T::lit(2.0)
    }

    /// Integrates the field from `initial` across the pulse while the qubit follows `path`
    /// (times relative to the pulse start).
    pub fn simulate_from(
        &self,
        initial: Complex<T>,
        pulse: &ReadoutPulse<T>,
        path: &StatePath<T>,
    ) -> FieldTrajectory<T> {
        let dt = pulse.sample_dt;
        let full = [Step::new(self.rate_ground, dt), Step::new(self.rate_excited, dt)];
        let idx = |s: QubitState| match s {
            QubitState::Ground => 0,
            QubitState::Excited => 1,
        };

        let mut state = path.initial;
        let mut jumps = path.jumps.iter().copied().peekable();
        let mut alpha = initial;
        let mut max_photons = initial.norm_sqr();
        let mut samples = Vec::with_capacity(pulse.len());

        for (k, &drive) in pulse.envelope.iter().enumerate() {
            let t_end = T::count(k + 1) * dt;
            if jumps.peek().is_some_and(|&j| j <= t_end) {
                let mut t = T::count(k) * dt;
                while let Some(&j) = jumps.peek() {
                    if j > t_end {
                        break;
                    }
                    if j > t {
                        alpha = Step::new(self.rate(state), j - t).apply(alpha, drive);
                        t = j;
                    }
                    state = state.flipped();
                    jumps.next();
                }
                alpha = Step::new(self.rate(state), t_end - t).apply(alpha, drive);
            } else {
                alpha = full[idx(state)].apply(alpha, drive);
            }
            max_photons = max_photons.max(alpha.norm_sqr());
            samples.push(alpha);
        }

        FieldTrajectory {
            samples,
            sample_dt: dt,
            max_photons,
            over_ncrit: max_photons > self.n_crit,
            over_saturation: self.saturation_photons.is_some_and(|s| max_photons > s),
        }
    }

    /// Undriven evolution over `duration` seconds with the qubit following `path`.
    pub fn free_evolve(&self, initial: Complex<T>, path: &StatePath<T>, duration: T) -> Complex<T> {
        let zero = Complex::new(T::zero(), T::zero());
        let mut state = path.initial;
        let mut t = T::zero();
        let mut alpha = initial;
        for &j in path.jumps.iter().take_while(|&&j| j <= duration) {
            alpha = Step::new(self.rate(state), j - t).apply(alpha, zero);
            t = j;
            state = state.flipped();
        }
        Step::new(self.rate(state), duration - t).apply(alpha, zero)
    }
}

/// Field trajectory starting from an empty cavity, flagged against `n_crit`.
pub fn simulate_field<T: Scalar>(
    pulse: &ReadoutPulse<T>,
    path: &StatePath<T>,
    device: &DeviceParams<T>,
    derived: &DerivedParams<T>,
) -> Result<FieldTrajectory<T>> {
    pulse.check_resolution(device.cavity_linewidth_kappa)?;
    path.validate_within(pulse.duration())?;
    let model = CavityModel::new(device, derived, pulse.drive_freq);
    Ok(model.simulate_from(Complex::new(T::zero(), T::zero()), pulse, path))
}

/// Constant real drive amplitude whose steady-state (n_g + n_e)/2 equals `target_n_bar`.
pub fn calibrate_drive<T: Scalar>(
    target_n_bar: T,
    device: &DeviceParams<T>,
    derived: &DerivedParams<T>,
    drive_freq: T,
) -> Result<T> {
    if !(target_n_bar >= T::zero()) || !target_n_bar.is_finite() {
        return Err(invalid("target_n_bar", "must be finite and >= 0"));
    }
    let model = CavityModel::new(device, derived, drive_freq);
    let unit = model.mean_steady_photons(Complex::new(T::one(), T::zero()));
    Ok((target_n_bar / unit).sqrt())
}

/// Residual cavity energy fraction exp(−2πκ·wait) after an undriven wait.
pub fn photon_depletion_fraction<T: Scalar>(wait: T, kappa: T) -> T {
    (-(T::TAU() * kappa * wait)).exp()
}
