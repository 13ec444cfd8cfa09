//! Device constants and closed-form derived quantities of the dispersive readout.
//!
//! Frequencies are stored as ordinary frequencies in Hz (the `/2π` values quoted
//! for circuit QED devices). Anything that enters the cavity equation of motion
//! is converted to angular units in [`crate::cavity`], nowhere else.

use serde::{Deserialize, Serialize};

use crate::cavity::QubitState;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Boltzmann constant in J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Planck constant in J s.
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Smallest accepted |Δ|/g for the dispersive approximation.
pub const MIN_DISPERSIVE_RATIO: f64 = 10.0;

/// Qubit, cavity, coupling and coherence constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams<T> {
    /// Bare cavity frequency (Hz).
    pub cavity_freq: T,
    /// Cavity energy decay rate κ expressed as an ordinary frequency (Hz).
    pub cavity_linewidth_kappa: T,
    /// Qubit g→e transition frequency (Hz).
    pub qubit_freq: T,
    /// Transmon anharmonicity (Hz). Carried for completeness; the two-level
    /// dispersive shift does not use it unless folded into `chi_override`.
    pub anharmonicity: T,
    /// Qubit-cavity coupling g (Hz).
    pub coupling_g: T,
    /// Energy relaxation time (s). May be infinite.
    pub t1: T,
    /// Ramsey dephasing time (s).
    pub t2_star: T,
    /// Replaces the two-level χ = g²/Δ when set (Hz, signed).
    pub chi_override: Option<T>,
    /// Which qubit state pulls the cavity up: when true the cavity sits at
    /// ω_c + |χ| with the qubit in g and at ω_c − |χ| in e.
    pub ground_shifts_up: bool,
}

impl<T: Scalar> DeviceParams<T> {
    /// Reference transmon and readout resonator.
    pub fn reference() -> Self {
        Self {
            cavity_freq: T::lit(8.081e9),
            cavity_linewidth_kappa: T::lit(10e6),
            qubit_freq: T::lit(5.0353e9),
            anharmonicity: T::lit(233e6),
            coupling_g: T::lit(67.6e6),
            t1: T::lit(2.8e-6),
            t2_star: T::lit(2.0e-6),
            chi_override: None,
            ground_shifts_up: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cavity_freq", self.cavity_freq),
            ("cavity_linewidth_kappa", self.cavity_linewidth_kappa),
            ("qubit_freq", self.qubit_freq),
            ("anharmonicity", self.anharmonicity),
            ("coupling_g", self.coupling_g),
            ("t1", self.t1),
            ("t2_star", self.t2_star),
        ];
        for (name, value) in positive {
            if value.is_nan() || value <= T::zero() {
                return Err(invalid(name, format!("must be strictly positive, got {value}")));
            }
        }
        for (name, value) in &positive[..5] {
            if !value.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if self.t2_star > T::lit(2.0) * self.t1 {
            return Err(invalid(
                "t2_star",
                format!("t2_star = {} exceeds 2·t1 = {}", self.t2_star, T::lit(2.0) * self.t1),
            ));
        }
        if let Some(chi) = self.chi_override {
            if !chi.is_finite() {
                return Err(invalid("chi_override", "must be finite"));
            }
        }
        let ratio = (self.qubit_freq - self.cavity_freq).abs() / self.coupling_g;
        if ratio < T::lit(MIN_DISPERSIVE_RATIO) {
            return Err(Error::NotDispersive { ratio: ratio.as_f64() });
        }
        Ok(())
    }
}

/// Quantities that follow from [`DeviceParams`] in the dispersive limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams<T> {
    /// Δ = ω_q − ω_c (Hz, signed; negative when the qubit sits below the cavity).
    pub detuning_delta: T,
    /// Dispersive half-shift χ (Hz, signed).
    pub chi: T,
    /// Critical photon number Δ²/(4g²).
    pub n_crit: T,
}

impl<T: Scalar> DerivedParams<T> {
    /// Signed cavity pull (Hz) for the given qubit state.
    pub fn cavity_shift(&self, state: QubitState, device: &DeviceParams<T>) -> T {
        let magnitude = self.chi.abs();
        let up = match state {
            QubitState::Ground => device.ground_shifts_up,
            QubitState::Excited => !device.ground_shifts_up,
        };
        if up {
            magnitude
        } else {
            -magnitude
        }
    }
}

pub fn derive_params<T: Scalar>(device: &DeviceParams<T>) -> Result<DerivedParams<T>> {
    device.validate()?;
    let delta = device.qubit_freq - device.cavity_freq;
    let g2 = device.coupling_g * device.coupling_g;
    let chi = device.chi_override.unwrap_or(g2 / delta);
    Ok(DerivedParams {
        detuning_delta: delta,
        chi,
        n_crit: delta * delta / (T::lit(4.0) * g2),
    })
}

/// Detection chain referred to its input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplifierChain<T> {
    /// Added noise in photon quanta at the signal frequency.
    pub noise_photons: T,
    /// Power gain (dB). Bookkeeping only: every discriminator is gain invariant.
    pub power_gain_db: T,
    /// Largest intracavity-equivalent photon number the chain tolerates.
    pub saturation_photons: T,
}

impl<T: Scalar> AmplifierChain<T> {
    /// SLUG preamplifier followed by the HEMT (T_N ≈ 0.8 K).
    pub fn slug() -> Self {
        Self {
            noise_photons: T::lit(3.2),
            power_gain_db: T::lit(15.0),
            saturation_photons: T::lit(40.0),
        }
    }

    /// Bare HEMT chain (T_N ≈ 4.1 K) evaluated with the same noise-temperature estimate.
    pub fn hemt() -> Self {
        Self {
            noise_photons: noise_photons_from_temperature(T::lit(4.1), T::lit(5.0353e9)),
            power_gain_db: T::lit(40.0),
            saturation_photons: T::lit(1e6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_photons >= T::zero()) || !self.noise_photons.is_finite() {
            return Err(invalid("noise_photons", "must be finite and >= 0"));
        }
        if !(self.saturation_photons > T::zero()) {
            return Err(invalid("saturation_photons", "must be > 0"));
        }
        if !self.power_gain_db.is_finite() {
            return Err(invalid("power_gain_db", "must be finite"));
        }
        Ok(())
    }
}

/// Rayleigh-Jeans noise quanta k_B·T/(h·f), without the vacuum half quantum.
pub fn noise_photons_from_temperature<T: Scalar>(temperature: T, reference_freq: T) -> T {
    let kb = T::lit(BOLTZMANN);
    let h = T::lit(PLANCK);
    kb * temperature / (h * reference_freq)
}

/// Expected boxcar SNR, 2·sinθ·√(n̄·κ·τ/(2·n_noise+1)).
///
/// `kappa` is an ordinary frequency in Hz and is converted to the angular rate
/// 2πκ before use; `tau` is the integration time in seconds.
pub fn snr_theoretical<T: Scalar>(n_bar: T, kappa: T, tau: T, n_noise: T, sin_theta_bar: T) -> T {
    let two = T::lit(2.0);
    let kappa_ang = T::TAU() * kappa;
    two * sin_theta_bar * (n_bar * kappa_ang * tau / (two * n_noise + T::one())).sqrt()
}

/// Power SNR gain (dB) of a chain with `n_noise_a` added photons over one with `n_noise_b`.
pub fn snr_improvement_db<T: Scalar>(n_noise_a: T, n_noise_b: T) -> T {
    let two = T::lit(2.0);
    T::lit(10.0) * ((two * n_noise_b + T::one()) / (two * n_noise_a + T::one())).log10()
}
