//! Acceptance checks against the reference device. Prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::Instant;

use dispersive_readout::cavity::CavityModel;
use dispersive_readout::optimizer::{grid_search_flat, optimize_pulse, GaConfig};
use dispersive_readout::protocols::{
    calibrate_thermal_population, default_qnd_delays, default_rb_lengths, run_fidelity, run_postselection, run_qnd,
    run_rb, steady_state_snr, PostSelectionTiming, SimConfig,
};
use dispersive_readout::{
    compute_report, derive_params, fit_threshold, noise_photons_from_temperature, photon_depletion_fraction,
    simulate_field, snr_improvement_db, AmplifierChain, DeviceParams, QubitState, ReadoutPulse, StatePath,
};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(x: f64, centre: f64, tol: f64) -> bool {
    (x - centre).abs() <= tol
}

fn criterion_1() -> Outcome {
    let device = DeviceParams::<f64>::reference();
    let d = derive_params(&device).unwrap();
    // Independent oracle from the quoted coupling and frequencies.
    let delta = device.qubit_freq - device.cavity_freq;
    let g = device.coupling_g;
    let n_crit = delta * delta / (4.0 * g * g);
    let two_chi = 2.0 * g * g / delta.abs();
    let ok_oracle = within(d.n_crit, n_crit, 1e-9 * n_crit) && within(2.0 * d.chi.abs(), two_chi, 1e-3);
    Outcome {
        pass: ok_oracle && within(d.n_crit, 507.0, 1.0) && within(2.0 * d.chi.abs() / 1e6, 3.0, 0.05),
        detail: format!(
            "n_crit = {:.2} (507 ± 1), |2χ|/2π = {:.4} MHz (3.0 ± 0.05)",
            d.n_crit,
            2.0 * d.chi.abs() / 1e6
        ),
    }
}

fn criterion_2() -> Outcome {
    let n_slug = noise_photons_from_temperature(0.8, 5.0353e9);
    let oracle = 1.380_649e-23 * 0.8 / (6.626_070_15e-34 * 5.0353e9);
    let slug = AmplifierChain::<f64>::slug();
    let hemt = AmplifierChain::<f64>::hemt();
    let gain = snr_improvement_db(slug.noise_photons, hemt.noise_photons);
    let pass = within(n_slug, oracle, 1e-12)
        && within(n_slug, 3.31, 0.01)
        && within(gain, 6.7, 0.3)
        && (7.0 - gain).abs() <= 0.5;
    Outcome {
        pass,
        detail: format!(
            "n_noise(0.8 K) = {n_slug:.4} (3.31 ± 0.01), SLUG over HEMT = {gain:.3} dB (6.7 ± 0.3, gap to 7 dB {:.2})",
            7.0 - gain
        ),
    }
}

fn criterion_3() -> Outcome {
    let r = steady_state_snr(&SimConfig::reference(), 40_000).unwrap();
    let snr = r.report.snr_meas;
    let z = (snr - r.predicted) / r.standard_error;
    Outcome {
        pass: (2.5..=4.0).contains(&snr) && z.abs() <= 3.0,
        detail: format!(
            "SNR = {snr:.3} in [2.5, 4.0]; analytic {:.3}, difference {z:+.2}σ (σ = {:.4})",
            r.predicted, r.standard_error
        ),
    }
}

/// Reference configuration with p_th tuned so that ε_g = 2.8 %.
fn calibrated() -> (SimConfig, f64) {
    let mut sim = SimConfig::reference();
    sim.seed = SEED;
    sim.calibration_shots = 20_000;
    let cal = calibrate_thermal_population(&sim, 0.028, 100_000, 0.001).unwrap();
    sim.preparation.thermal_excited_population = cal.thermal_excited_population;
    (sim, cal.thermal_excited_population)
}

fn criterion_4(sim: &SimConfig, p_th: f64) -> Outcome {
    let r = run_fidelity(sim, 200_000).unwrap().report;
    let pass = within(r.error_g, 0.028, 0.005) && within(r.fidelity, 0.919, 0.015) && within(r.error_e, 0.053, 0.015);
    Outcome {
        pass,
        detail: format!(
            "p_th = {:.4}: ε_g = {:.2}% (2.8 ± 0.5), F = {:.2}% (91.9 ± 1.5), ε_e = {:.2}% (5.3 ± 1.5)",
            p_th,
            100.0 * r.error_g,
            100.0 * r.fidelity,
            100.0 * r.error_e
        ),
    }
}

fn criterion_5(sim: &SimConfig) -> Outcome {
    let timing = PostSelectionTiming {
        pre_measurement: 320e-9,
        wait: 300e-9,
    };
    let r = run_postselection(sim, 200_000, timing).unwrap();
    let gain = r.selected.fidelity - r.raw.fidelity;
    Outcome {
        pass: within(gain, 0.024, 0.010) && within(r.selected.error_g, 0.010, 0.005),
        detail: format!(
            "gain = {:+.2}% (2.4 ± 1.0), selected ε_g = {:.2}% (1.0 ± 0.5), raw F = {:.2}%, discarded {:.2}%",
            100.0 * gain,
            100.0 * r.selected.error_g,
            100.0 * r.raw.fidelity,
            100.0 * r.discard_fraction
        ),
    }
}

fn criterion_6(sim: &SimConfig) -> Outcome {
    let r = run_qnd(sim, &default_qnd_delays(), 50_000).unwrap();
    let tau = r.fit_ee.decay_time;
    let pass = within(r.p_gg[0], 0.983, 0.010) && within(r.p_ee[0], 0.911, 0.015) && within(tau, 2.8e-6, 0.28e-6);
    Outcome {
        pass,
        detail: format!(
            "P_g|g(0) = {:.2}% (98.3 ± 1.0), P_e|e(0) = {:.2}% (91.1 ± 1.5), τ_ee = {:.3} μs (2.8 ± 10%); state-only P_e|e(0) = {:.2}%",
            100.0 * r.p_gg[0],
            100.0 * r.p_ee[0],
            tau * 1e6,
            100.0 * r.true_p_ee[0]
        ),
    }
}

fn criterion_7() -> Outcome {
    let snr = 3.3;
    let n = 100_000;
    let draw = |mean: f64, index: u64| -> Vec<f64> {
        let mut rng = dispersive_readout::rng::stream(SEED, 0xacce_0007, index);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mean + z
            })
            .collect()
    };
    let (g, e) = (draw(0.0, 0), draw(2.0 * snr, 1));
    let t = fit_threshold(&g, &e).unwrap();
    let r = compute_report(&g, &e, t.value).unwrap();
    let expected = 1.0 - statrs::function::erf::erf(snr / 2f64.sqrt());
    let q = expected / 2.0;
    let sigma = (2.0 * q * (1.0 - q) / n as f64).sqrt();
    let z = (1.0 - r.fidelity - expected) / sigma;
    Outcome {
        pass: z.abs() <= 3.0,
        detail: format!(
            "1 − F = {:.3e} vs 1 − erf(3.3/√2) = {:.3e}, {z:+.2}σ at {n} shots per class",
            1.0 - r.fidelity,
            expected
        ),
    }
}

fn criterion_8() -> Outcome {
    let r = run_rb(0.005, &default_rb_lengths(), 50, 500, SEED).unwrap();
    Outcome {
        pass: within(r.fitted_error_per_gate, 0.005, 0.0005),
        detail: format!(
            "recovered {:.4}% from injected 0.5% (± 0.05)",
            100.0 * r.fitted_error_per_gate
        ),
    }
}

fn criterion_9() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let mut check = |ok: bool, note: String| {
        pass &= ok;
        notes.push(format!("{}{note}", if ok { "" } else { "FAILED " }));
    };

    // Determinism at any pool size.
    let mut sim = SimConfig::reference();
    sim.seed = SEED;
    let in_pool = |threads: usize, sim: &SimConfig| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_fidelity(sim, 4000).unwrap())
    };
    let one = in_pool(1, &sim);
    let four = in_pool(4, &sim);
    let mut other = sim.clone();
    other.seed = SEED + 1;
    let moved = in_pool(4, &other);
    check(
        one == four && one.shots != moved.shots,
        "seeded runs identical on 1 and 4 threads".into(),
    );

    // Steady state against the closed form.
    let device = DeviceParams::<f64>::reference();
    let derived = derive_params(&device).unwrap();
    let drive_freq = 8.0762e9;
    let eps = Complex64::new(3.0e7, -1.0e7);
    let pulse = ReadoutPulse::rectangular(drive_freq, eps, 3e-6, 1e-9).unwrap();
    let mut worst: f64 = 0.0;
    for (state, sign) in [(QubitState::Ground, 1.0), (QubitState::Excited, -1.0)] {
        let field = simulate_field(&pulse, &StatePath::constant(state), &device, &derived).unwrap();
        let shift = sign * device.coupling_g.powi(2) / (device.qubit_freq - device.cavity_freq).abs();
        let rate = Complex64::new(
            PI * device.cavity_linewidth_kappa,
            TAU * (device.cavity_freq + shift - drive_freq),
        );
        let oracle = Complex64::new(0.0, -1.0) * eps / rate;
        let last = *field.samples.last().unwrap();
        worst = worst.max((last - oracle).norm() / oracle.norm());
    }
    check(worst <= 1e-9, format!("steady state rel. error {worst:.1e}"));

    // Linearity in the drive and invariance under chain gain.
    let path = StatePath::new(QubitState::Excited, vec![80e-9]).unwrap();
    let short = ReadoutPulse::rectangular(drive_freq, eps, 200e-9, 1e-9).unwrap();
    let base = simulate_field(&short, &path, &device, &derived).unwrap();
    let scaled = simulate_field(&short.scaled(-2.5), &path, &device, &derived).unwrap();
    let peak = base.samples.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let dev = base
        .samples
        .iter()
        .zip(&scaled.samples)
        .map(|(a, b)| (a * -2.5 - b).norm())
        .fold(0.0, f64::max);
    let mut loud = sim.clone();
    loud.chain.power_gain_db += 30.0;
    let gain_same = run_fidelity(&loud, 4000).unwrap().report == one.report;
    check(
        dev <= 1e-12 * peak && gain_same,
        format!("linearity error {:.1e}, gain invariant {gain_same}", dev / peak),
    );

    // Ring-down.
    let kappa = device.cavity_linewidth_kappa;
    let fraction = photon_depletion_fraction(300e-9, kappa);
    let model = CavityModel::new(&device, &derived, drive_freq);
    let start = model.steady_state(eps, QubitState::Ground);
    let end = model.free_evolve(start, &StatePath::constant(QubitState::Ground), 300e-9);
    let simulated = end.norm_sqr() / start.norm_sqr();
    let oracle = (-TAU * kappa * 300e-9).exp();
    check(
        within(fraction, 6.5e-9, 0.05e-9) && within(simulated, oracle, 1e-9 * oracle),
        format!("depletion at 300 ns {fraction:.3e}, simulated {simulated:.3e}"),
    );

    // Genetic search.
    let ga = GaConfig {
        population: 10,
        generations: 6,
        shots_per_eval: 800,
        segments: 4,
        ..GaConfig::default()
    };
    let r = optimize_pulse(&ga, &sim).unwrap();
    let monotone = r.history.windows(2).all(|w| w[1].best >= w[0].best);
    check(
        monotone,
        format!("elitist best over {} generations non-decreasing", r.history.len()),
    );
    let one_segment = GaConfig {
        population: 8,
        generations: 8,
        segments: 1,
        shots_per_eval: 600,
        constraint_max_photons: 1e6,
        mutation_rate: 0.5,
        mutation_scale: 0.3,
        ..GaConfig::default()
    };
    let (_, grid) = grid_search_flat(&one_segment, &sim, 50).unwrap();
    let found = optimize_pulse(&one_segment, &sim).unwrap().search_fitness;
    check(
        found >= 0.98 * grid.fitness,
        format!("1-segment search {found:.4} vs grid {:.4}", grid.fitness),
    );

    Outcome {
        pass,
        detail: notes.join("; "),
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut show = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] {id} {name}: {} ({:.1} s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failures += 1;
        }
    };
    show(1, "derived constants", &mut criterion_1);
    show(2, "noise budget", &mut criterion_2);
    show(3, "SNR consistency", &mut criterion_3);
    let (sim, p_th) = calibrated();
    show(4, "fidelity", &mut || criterion_4(&sim, p_th));
    show(5, "post-selection", &mut || criterion_5(&sim));
    show(6, "QND correlation", &mut || criterion_6(&sim));
    show(7, "Gaussian bound", &mut criterion_7);
    show(8, "RB recovery", &mut criterion_8);
    show(9, "property suite", &mut criterion_9);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
