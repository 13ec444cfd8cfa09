//! Genetic search over piecewise-constant readout envelopes.
//!
//! Fitness is the combined fidelity of a shot batch scored with an optimised
//! boxcar, minus the relative photon-limit violation. Every fitness evaluation
//! uses the same shot streams (common random numbers), so an unchanged
//! individual always gets the same fitness and elitism keeps the per-generation
//! best non-decreasing.

use num_complex::Complex64;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{CavityModel, QubitState, ReadoutPulse, StatePath};
use crate::error::{invalid, Result};
use crate::protocols::{calibrate_filter, Flag, SimConfig};
use crate::rng::{self, tags};
use crate::trajectories::Sequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Mutation width: relative to the flat-pulse amplitude for magnitudes, in
    /// radians for phases.
    pub mutation_scale: f64,
    pub crossover_rate: f64,
    /// Individuals copied unchanged into the next generation.
    pub elitism: usize,
    pub segments: usize,
    pub shots_per_eval: usize,
    pub constraint_max_photons: f64,
    /// Upper bound on segment magnitudes, in units of the flat-pulse amplitude.
    pub max_amplitude: f64,
    /// Adds the drive frequency as a gene, searched within ±`drive_freq_span` Hz.
    pub optimize_drive_freq: bool,
    pub drive_freq_span: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 24,
            generations: 30,
            mutation_rate: 0.2,
            mutation_scale: 0.15,
            crossover_rate: 0.7,
            elitism: 2,
            segments: 8,
            shots_per_eval: 2000,
            constraint_max_photons: 40.0,
            max_amplitude: 2.0,
            optimize_drive_freq: false,
            drive_freq_span: 2e6,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(invalid("population", "must be >= 2"));
        }
        if self.elitism > self.population {
            return Err(invalid("elitism", "must not exceed the population"));
        }
        if self.segments == 0 {
            return Err(invalid("segments", "must be >= 1"));
        }
        if self.shots_per_eval < 2 {
            return Err(invalid("shots_per_eval", "must be >= 2"));
        }
        for (name, p) in [
            ("mutation_rate", self.mutation_rate),
            ("crossover_rate", self.crossover_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(name, "must lie in [0, 1]"));
            }
        }
        if !(self.mutation_scale >= 0.0) || !self.mutation_scale.is_finite() {
            return Err(invalid("mutation_scale", "must be finite and >= 0"));
        }
        if !(self.constraint_max_photons > 0.0) {
            return Err(invalid("constraint_max_photons", "must be > 0"));
        }
        if !(self.max_amplitude > 0.0) || !self.max_amplitude.is_finite() {
            return Err(invalid("max_amplitude", "must be finite and > 0"));
        }
        if !(self.drive_freq_span >= 0.0) || !self.drive_freq_span.is_finite() {
            return Err(invalid("drive_freq_span", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One candidate envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub segments: Vec<Complex64>,
    pub drive_freq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Fidelity minus the photon-limit penalty.
    pub fitness: f64,
    pub fidelity: f64,
    pub max_photons: f64,
}

impl Evaluation {
    fn feasible(&self, limit: f64) -> bool {
        self.max_photons <= limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best_envelope: ReadoutPulse<f64>,
    pub best_genome: Genome,
    /// Fidelity of the winner re-measured on a fresh batch of 4× `shots_per_eval`.
    pub best_fitness: f64,
    /// The winner's fitness during the search.
    pub search_fitness: f64,
    pub best_max_photons: f64,
    /// The flat starting pulse measured on the same fresh batch.
    pub baseline_fitness: f64,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
    pub flags: Vec<Flag>,
}

/// Scores genomes against a fixed shot batch.
pub struct Evaluator<'a> {
    sim: &'a SimConfig,
    samples: usize,
    limit: f64,
    shots: usize,
    tag: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(sim: &'a SimConfig, limit: f64, shots: usize, tag: u64) -> Result<Self> {
        sim.validate()?;
        let samples = (sim.readout.measurement_time / sim.readout.sample_dt).round() as usize;
        if samples == 0 {
            return Err(invalid("measurement_time", "must span at least one sample"));
        }
        Ok(Self {
            sim,
            samples,
            limit,
            shots,
            tag,
        })
    }

    pub fn pulse(&self, genome: &Genome) -> Result<ReadoutPulse<f64>> {
        ReadoutPulse::piecewise(
            genome.drive_freq,
            &genome.segments,
            self.samples,
            self.sim.readout.sample_dt,
        )
    }

    /// Largest noiseless photon number over both frozen qubit states.
    pub fn max_photons(&self, pulse: &ReadoutPulse<f64>) -> Result<f64> {
        let model = CavityModel::new(&self.sim.device, &self.sim.derived()?, pulse.drive_freq);
        let zero = Complex64::new(0.0, 0.0);
        Ok([QubitState::Ground, QubitState::Excited]
            .iter()
            .map(|&s| model.simulate_from(zero, pulse, &StatePath::constant(s)).max_photons)
            .fold(0.0, f64::max))
    }

    pub fn evaluate(&self, genome: &Genome) -> Result<Evaluation> {
        let pulse = self.pulse(genome)?;
        let max_photons = self.max_photons(&pulse)?;
        let mut sim = self.sim.clone();
        sim.readout.drive_freq = genome.drive_freq;
        let engine = sim.engine()?;
        let cal = calibrate_filter(&sim, &engine, &Sequence::readout(pulse), 0, self.tag, self.shots / 2)?;
        let penalty = (max_photons / self.limit - 1.0).max(0.0);
        Ok(Evaluation {
            fitness: cal.fidelity - penalty,
            fidelity: cal.fidelity,
            max_photons,
        })
    }
}

struct Bounds {
    max_magnitude: f64,
    base_freq: f64,
    span: f64,
    flat: f64,
}

fn mutate(genome: &mut Genome, ga: &GaConfig, bounds: &Bounds, rng: &mut ChaCha8Rng) {
    for s in &mut genome.segments {
        let (mut r, mut theta) = s.to_polar();
        let (grow, turn) = (rng.random_bool(ga.mutation_rate), rng.random_bool(ga.mutation_rate));
        if grow {
            r += ga.mutation_scale * bounds.flat * rng.sample::<f64, _>(StandardNormal);
        }
        if turn {
            theta += ga.mutation_scale * rng.sample::<f64, _>(StandardNormal);
        }
        if grow || turn {
            *s = Complex64::from_polar(r.clamp(0.0, bounds.max_magnitude), theta);
        }
    }
    if ga.optimize_drive_freq && rng.random_bool(ga.mutation_rate) {
        let f = genome.drive_freq + ga.mutation_scale * bounds.span * rng.sample::<f64, _>(StandardNormal);
        genome.drive_freq = f.clamp(bounds.base_freq - bounds.span, bounds.base_freq + bounds.span);
    }
}

fn crossover(a: &Genome, b: &Genome, rng: &mut ChaCha8Rng) -> Genome {
    Genome {
        segments: a
            .segments
            .iter()
            .zip(&b.segments)
            .map(|(x, y)| if rng.random_bool(0.5) { *x } else { *y })
            .collect(),
        drive_freq: if rng.random_bool(0.5) {
            a.drive_freq
        } else {
            b.drive_freq
        },
    }
}

fn tournament<'p>(pop: &'p [(Genome, Evaluation)], rng: &mut ChaCha8Rng) -> &'p Genome {
    let a = pop.choose(rng).expect("non-empty population");
    let b = pop.choose(rng).expect("non-empty population");
    if b.1.fitness > a.1.fitness {
        &b.0
    } else {
        &a.0
    }
}

fn stats(generation: usize, pop: &[(Genome, Evaluation)]) -> GenerationStats {
    GenerationStats {
        generation,
        best: pop.iter().map(|p| p.1.fitness).fold(f64::NEG_INFINITY, f64::max),
        mean: pop.iter().map(|p| p.1.fitness).sum::<f64>() / pop.len() as f64,
    }
}

fn sort_by_fitness(pop: &mut [(Genome, Evaluation)]) {
    pop.sort_by(|a, b| b.1.fitness.total_cmp(&a.1.fitness));
}

/// Runs the search. The first individual is the flat pulse at the configured
/// n̄, the others are mutated copies of it. Randomness comes from `sim.seed`.
pub fn optimize_pulse(ga: &GaConfig, sim: &SimConfig) -> Result<GaResult> {
    ga.validate()?;
    let evaluator = Evaluator::new(sim, ga.constraint_max_photons, ga.shots_per_eval, tags::GA_FITNESS)?;
    let flat = sim.drive_amplitude()?;
    let bounds = Bounds {
        max_magnitude: ga.max_amplitude * flat,
        base_freq: sim.readout.drive_freq,
        span: ga.drive_freq_span,
        flat,
    };
    let mut rng = rng::stream(sim.seed, tags::GA_SEARCH, 0);

    let baseline = Genome {
        segments: vec![Complex64::new(flat.min(bounds.max_magnitude), 0.0); ga.segments],
        drive_freq: sim.readout.drive_freq,
    };
    let mut genomes = vec![baseline.clone()];
    while genomes.len() < ga.population {
        let mut g = baseline.clone();
        mutate(
            &mut g,
            &GaConfig {
                mutation_rate: 1.0,
                ..ga.clone()
            },
            &bounds,
            &mut rng,
        );
        genomes.push(g);
    }
    let evaluate_all = |genomes: Vec<Genome>| -> Result<Vec<(Genome, Evaluation)>> {
        genomes
            .into_par_iter()
            .map(|g| evaluator.evaluate(&g).map(|e| (g, e)))
            .collect()
    };
    let mut population = evaluate_all(genomes)?;
    let mut evaluations = population.len();
    sort_by_fitness(&mut population);

    let limit = ga.constraint_max_photons;
    let mut history = vec![stats(0, &population)];
    let mut best_feasible: Option<(Genome, Evaluation)> = population.iter().find(|p| p.1.feasible(limit)).cloned();
    let mut flags = Vec::new();

    for generation in 1..=ga.generations {
        let elites: Vec<_> = population[..ga.elitism].to_vec();
        let mut children = Vec::with_capacity(ga.population - ga.elitism);
        while children.len() < ga.population - ga.elitism {
            let a = tournament(&population, &mut rng);
            let mut child = if rng.random_bool(ga.crossover_rate) {
                crossover(a, tournament(&population, &mut rng), &mut rng)
            } else {
                a.clone()
            };
            mutate(&mut child, ga, &bounds, &mut rng);
            children.push(child);
        }
        evaluations += children.len();
        let mut next = elites;
        next.extend(evaluate_all(children)?);
        sort_by_fitness(&mut next);
        population = next;
        history.push(stats(generation, &population));
        if let Some(p) = population.iter().find(|p| p.1.feasible(limit)) {
            if best_feasible.as_ref().is_none_or(|b| p.1.fitness > b.1.fitness) {
                best_feasible = Some(p.clone());
            }
        }
        if population.iter().all(|p| p.0 == population[0].0) {
            flags.push(Flag::ZeroDiversity { generation });
            break;
        }
    }

    let (winner, search) = best_feasible.ok_or_else(|| {
        invalid(
            "constraint_max_photons",
            "no envelope met the photon limit; raise the limit or lower n_bar",
        )
    })?;
    let final_eval = Evaluator::new(sim, limit, 4 * ga.shots_per_eval, tags::GA_FINAL)?;
    let best = final_eval.evaluate(&winner)?;
    let baseline_eval = final_eval.evaluate(&baseline)?;
    Ok(GaResult {
        best_envelope: final_eval.pulse(&winner)?,
        best_genome: winner,
        best_fitness: best.fitness,
        search_fitness: search.fitness,
        best_max_photons: search.max_photons,
        baseline_fitness: baseline_eval.fitness,
        history,
        evaluations: evaluations + 2,
        flags,
    })
}

/// Exhaustive search over `points` flat amplitudes in `[0, max_amplitude]` on the
/// same fitness batch as the genetic search. Returns the best (amplitude, fitness).
pub fn grid_search_flat(ga: &GaConfig, sim: &SimConfig, points: usize) -> Result<(f64, Evaluation)> {
    ga.validate()?;
    if points < 2 {
        return Err(invalid("points", "must be >= 2"));
    }
    let evaluator = Evaluator::new(sim, ga.constraint_max_photons, ga.shots_per_eval, tags::GA_FITNESS)?;
    let top = ga.max_amplitude * sim.drive_amplitude()?;
    let scored: Vec<(f64, Evaluation)> = (0..points)
        .into_par_iter()
        .map(|k| {
            let amplitude = top * k as f64 / (points - 1) as f64;
            let genome = Genome {
                segments: vec![Complex64::new(amplitude, 0.0)],
                drive_freq: sim.readout.drive_freq,
            };
            evaluator.evaluate(&genome).map(|e| (amplitude, e))
        })
        .collect::<Result<_>>()?;
    Ok(scored
        .into_iter()
        .fold(None, |best: Option<(f64, Evaluation)>, item| match best {
            Some(b) if b.1.fitness >= item.1.fitness => Some(b),
            _ => Some(item),
        })
        .expect("at least two grid points"))
}
