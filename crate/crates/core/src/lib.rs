//! Monte Carlo simulation and analysis of single-shot dispersive qubit readout.
//!
//! The crate simulates a transmon dispersively coupled to a readout cavity and
//! detected through a low-noise amplifier chain. It generates heterodyne
//! measurement records shot by shot and runs the standard readout experiments on
//! them: single-shot fidelity, two-pulse QND correlation, post-selected
//! initialisation, randomized benchmarking, and a genetic search over drive
//! envelopes.
//!
//! The closed-form physics ([`model`], [`cavity`]), the discrimination
//! statistics ([`discrimination`]) and the curve fits ([`fit`]) are generic over
//! the [`Scalar`] type. The Monte Carlo layer ([`trajectories`], [`protocols`],
//! [`optimizer`]) runs in `f64`; the aliases below name the concrete types it uses.

// Guards are written `!(x > 0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cavity;
pub mod discrimination;
pub mod error;
pub mod fit;
pub mod model;
pub mod optimizer;
pub mod protocols;
pub mod rng;
pub mod scalar;
pub mod trajectories;

pub use cavity::{
    calibrate_drive, photon_depletion_fraction, simulate_field, CavityModel, FieldTrajectory, QubitState, ReadoutPulse,
    StatePath,
};
pub use discrimination::{
    apply_filter, build_histogram, compute_report, fit_threshold, gaussian_fidelity_bound, Calibration,
    DiscriminationReport, FilterKind, FilterSpec, Histogram, Threshold,
};
pub use error::{Error, Result};
pub use fit::{fit_exponential, ExpFit};
pub use model::{
    derive_params, noise_photons_from_temperature, snr_improvement_db, snr_theoretical, AmplifierChain, DerivedParams,
    DeviceParams,
};
pub use scalar::Scalar;
pub use trajectories::{
    generate_shot, sample_jump_path, sample_preparation, Intent, NoiseModel, PreparationModel, Sequence, Shot,
    ShotEngine, Step,
};

pub type Device = DeviceParams<f64>;
pub type Device32 = DeviceParams<f32>;
pub type Derived = DerivedParams<f64>;
pub type Derived32 = DerivedParams<f32>;
pub type Chain = AmplifierChain<f64>;
pub type Chain32 = AmplifierChain<f32>;
pub type Pulse = ReadoutPulse<f64>;
pub type Pulse32 = ReadoutPulse<f32>;
pub type Path = StatePath<f64>;
pub type Field = FieldTrajectory<f64>;
pub type Filter = FilterSpec<f64>;
pub type Report = DiscriminationReport<f64>;
pub type Report32 = DiscriminationReport<f32>;
pub type ScoreHistogram = Histogram<f64>;
pub type ReadoutCalibration = Calibration<f64>;
