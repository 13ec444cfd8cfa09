//! Scores, thresholds, histograms and fidelity metrics for single-shot readout.
//!
//! Fidelity follows the combined preparation-and-readout convention
//! `F = 1 − ε_g − ε_e`, where ε_g is the fraction of g-prepared shots read as e
//! and ε_e the fraction of e-prepared shots read as g.

use std::cmp::Ordering;
use std::io::{self, Write};

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Boxcar,
    Matched,
}

/// Linear filter reducing a record to one real score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec<T> {
    pub kind: FilterKind,
    /// Window start (s) relative to the record start.
    pub window_start: T,
    /// Window length (s).
    pub window_length: T,
    /// Demodulation phase φ: the score projects onto Re[e^{−iφ}·…].
    pub quadrature_phase: T,
    /// Unit-energy matched-filter weights, one per window sample.
    pub weights: Option<Vec<Complex<T>>>,
    pub sample_dt: T,
}

impl<T: Scalar> FilterSpec<T> {
    pub fn boxcar(window_start: T, window_length: T, quadrature_phase: T, sample_dt: T) -> Self {
        Self {
            kind: FilterKind::Boxcar,
            window_start,
            window_length,
            quadrature_phase,
            weights: None,
            sample_dt,
        }
    }

    /// Matched filter starting at `window_start`; the weights are normalised to unit energy.
    pub fn matched(weights: Vec<Complex<T>>, window_start: T, sample_dt: T) -> Result<Self> {
        let energy = weights.iter().map(|w| w.norm_sqr()).fold(T::zero(), |a, b| a + b);
        if weights.is_empty() || !(energy > T::zero()) || !energy.is_finite() {
            return Err(invalid("weights", "need at least one finite non-zero weight"));
        }
        let norm = energy.sqrt();
        let weights: Vec<_> = weights.into_iter().map(|w| w / norm).collect();
        Ok(Self {
            kind: FilterKind::Matched,
            window_start,
            window_length: T::count(weights.len()) * sample_dt,
            quadrature_phase: T::zero(),
            weights: Some(weights),
            sample_dt,
        })
    }

    /// Sample index range covered by the window.
    pub fn sample_range(&self, record_len: usize) -> Result<std::ops::Range<usize>> {
        let to_index = |x: T| (x / self.sample_dt).round().to_usize();
        let (start, len) = match (to_index(self.window_start), to_index(self.window_length)) {
            (Some(s), Some(l)) => (s, l),
            _ => return Err(invalid("window", "start and length must be non-negative and finite")),
        };
        if len == 0 || start + len > record_len {
            return Err(Error::WindowOutOfBounds {
                start,
                end: start + len,
                len: record_len,
            });
        }
        Ok(start..start + len)
    }
}

/// Boxcar: mean of Re[e^{−iφ}·record] over the window. Matched: Re[e^{−iφ}·Σ w̄_k·record_k].
pub fn apply_filter<T: Scalar>(record: &[Complex<T>], spec: &FilterSpec<T>) -> Result<T> {
    let range = spec.sample_range(record.len())?;
    let rotation = Complex::from_polar(T::one(), -spec.quadrature_phase);
    let window = &record[range];
    match spec.kind {
        FilterKind::Boxcar => {
            let sum = window.iter().fold(Complex::new(T::zero(), T::zero()), |a, b| a + b);
            Ok((rotation * sum).re / T::count(window.len()))
        }
        FilterKind::Matched => {
            let weights = spec.weights.as_deref().ok_or(Error::Empty("matched filter weights"))?;
            if weights.len() != window.len() {
                return Err(Error::WeightLength {
                    weights: weights.len(),
                    window: window.len(),
                });
            }
            let sum = weights
                .iter()
                .zip(window)
                .fold(Complex::new(T::zero(), T::zero()), |a, (w, r)| a + w.conj() * r);
            Ok((rotation * sum).re)
        }
    }
}

/// Decision boundary between the two score distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold<T> {
    pub value: T,
    /// True when scores above `value` are read as e.
    pub excited_above: bool,
    /// Set when no threshold beats chance (identical distributions).
    pub zero_separability: bool,
}

impl<T: Scalar> Threshold<T> {
    pub fn reads_excited(&self, score: T) -> bool {
        if self.excited_above {
            score > self.value
        } else {
            score < self.value
        }
    }
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |a, &b| a + b) / T::count(xs.len())
}

/// Sample standard deviation (n − 1 normalisation, zero for a single sample).
fn std_dev<T: Scalar>(xs: &[T], mean: T) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let ss = xs.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean));
    (ss / T::count(xs.len() - 1)).sqrt()
}

fn cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Threshold minimising ε_g + ε_e on the empirical distributions.
///
/// The error is constant between consecutive pooled scores; among optimal gaps the
/// widest wins and the threshold sits at its midpoint.
pub fn fit_threshold<T: Scalar>(scores_g: &[T], scores_e: &[T]) -> Result<Threshold<T>> {
    if scores_g.is_empty() || scores_e.is_empty() {
        return Err(Error::Empty("threshold fit needs scores for both states"));
    }
    let excited_above = mean(scores_e) >= mean(scores_g);
    let mut pooled: Vec<(T, bool)> = scores_g
        .iter()
        .map(|&s| (s, false))
        .chain(scores_e.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| cmp(&a.0, &b.0));

    let (ng, ne) = (scores_g.len() as u128, scores_e.len() as u128);
    let n = pooled.len();
    let lo = pooled[0].0;
    let hi = pooled[n - 1].0;
    let spread = hi - lo;

    // Errors scaled by ng·ne so ties compare exactly. `below_*` count scores under the cut.
    let (mut below_g, mut below_e) = (0u128, 0u128);
    let cost = |below_g: u128, below_e: u128| {
        let (err_g, err_e) = if excited_above {
            (ng - below_g, below_e)
        } else {
            (below_g, ne - below_e)
        };
        err_g * ne + err_e * ng
    };
    let mut best: Option<(u128, T, T)> = None; // (cost, width, threshold)
    for i in 0..=n {
        let eligible = i == 0 || i == n || cmp(&pooled[i - 1].0, &pooled[i].0) == Ordering::Less;
        if eligible {
            let c = cost(below_g, below_e);
            let (width, value) = if i == 0 {
                (spread, lo - spread)
            } else if i == n {
                (spread, hi + spread)
            } else {
                let (a, b) = (pooled[i - 1].0, pooled[i].0);
                (b - a, a + (b - a) / T::lit(2.0))
            };
            let better = match best {
                None => true,
                Some((bc, bw, _)) => c < bc || (c == bc && width > bw),
            };
            if better {
                best = Some((c, width, value));
            }
        }
        if i < n {
            if pooled[i].1 {
                below_e += 1;
            } else {
                below_g += 1;
            }
        }
    }
    let (best_cost, _, value) = best.expect("at least one candidate");
    if best_cost >= ng * ne {
        let pooled_mean = pooled.iter().fold(T::zero(), |a, p| a + p.0) / T::count(n);
        return Ok(Threshold {
            value: pooled_mean,
            excited_above,
            zero_separability: true,
        });
    }
    Ok(Threshold {
        value,
        excited_above,
        zero_separability: false,
    })
}

/// Per-state errors, SNR and combined fidelity at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationReport<T> {
    pub threshold: T,
    /// |μ_g − μ_e|/(σ_g + σ_e); zero when undefined (see `snr_defined`).
    pub snr_meas: T,
    pub snr_defined: bool,
    /// Fraction of g-prepared shots read as e.
    pub error_g: T,
    /// Fraction of e-prepared shots read as g.
    pub error_e: T,
    /// 1 − ε_g − ε_e.
    pub fidelity: T,
    pub mean_g: T,
    pub mean_e: T,
    pub std_g: T,
    pub std_e: T,
    pub count_g: usize,
    pub count_e: usize,
}

impl<T: Scalar> DiscriminationReport<T> {
    /// Delta-method standard error of `snr_meas`, treating both classes as Gaussian.
    pub fn snr_standard_error(&self) -> T {
        if !self.snr_defined {
            return T::zero();
        }
        let (ng, ne) = (T::count(self.count_g.max(2)), T::count(self.count_e.max(2)));
        let two = T::lit(2.0);
        let sep = (self.mean_e - self.mean_g).abs();
        let spread = self.std_g + self.std_e;
        let var_sep = self.std_g * self.std_g / ng + self.std_e * self.std_e / ne;
        let var_spread =
            self.std_g * self.std_g / (two * (ng - T::one())) + self.std_e * self.std_e / (two * (ne - T::one()));
        self.snr_meas * (var_sep / (sep * sep) + var_spread / (spread * spread)).sqrt()
    }

    /// Binomial standard error of `1 − fidelity`.
    pub fn infidelity_standard_error(&self) -> T {
        let var = |p: T, n: usize| p * (T::one() - p) / T::count(n.max(1));
        (var(self.error_g, self.count_g) + var(self.error_e, self.count_e)).sqrt()
    }
}

pub fn compute_report<T: Scalar>(scores_g: &[T], scores_e: &[T], threshold: T) -> Result<DiscriminationReport<T>> {
    if scores_g.is_empty() || scores_e.is_empty() {
        return Err(Error::Empty("report needs scores for both states"));
    }
    let (mean_g, mean_e) = (mean(scores_g), mean(scores_e));
    let (std_g, std_e) = (std_dev(scores_g, mean_g), std_dev(scores_e, mean_e));
    let rule = Threshold {
        value: threshold,
        excited_above: mean_e >= mean_g,
        zero_separability: false,
    };
    let fraction = |xs: &[T], excited: bool| {
        T::count(xs.iter().filter(|&&s| rule.reads_excited(s) == excited).count()) / T::count(xs.len())
    };
    let error_g = fraction(scores_g, true);
    let error_e = fraction(scores_e, false);
    let spread = std_g + std_e;
    let snr_defined = spread > T::zero();
    let snr_meas = if snr_defined {
        (mean_g - mean_e).abs() / spread
    } else {
        T::zero()
    };
    Ok(DiscriminationReport {
        threshold,
        snr_meas,
        snr_defined,
        error_g,
        error_e,
        fidelity: T::one() - error_g - error_e,
        mean_g,
        mean_e,
        std_g,
        std_e,
        count_g: scores_g.len(),
        count_e: scores_e.len(),
    })
}

/// erf(SNR/√2): the fidelity two equal-width Gaussians separated by `snr` allow.
pub fn gaussian_fidelity_bound<T: Scalar>(snr: T) -> T {
    T::lit(statrs::function::erf::erf(snr.as_f64() / std::f64::consts::SQRT_2))
}

/// Shared-edge histogram of both score populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram<T> {
    pub bin_edges: Vec<T>,
    pub counts_g: Vec<u64>,
    pub counts_e: Vec<u64>,
    /// Set when all scores coincide and the histogram collapses to one bin.
    pub degenerate: bool,
}

impl<T: Scalar> Histogram<T> {
    pub fn bin_centers(&self) -> Vec<T> {
        self.bin_edges
            .windows(2)
            .map(|w| w[0] + (w[1] - w[0]) / T::lit(2.0))
            .collect()
    }

    /// Writes `bin_center,count_g,count_e` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_center,count_g,count_e")?;
        for ((c, g), e) in self.bin_centers().iter().zip(&self.counts_g).zip(&self.counts_e) {
            writeln!(out, "{c},{g},{e}")?;
        }
        Ok(())
    }
}

pub fn build_histogram<T: Scalar>(scores_g: &[T], scores_e: &[T], bins: usize) -> Result<Histogram<T>> {
    if bins < 2 {
        return Err(invalid("bins", "need at least 2 bins"));
    }
    let all = || scores_g.iter().chain(scores_e);
    let Some(&first) = all().next() else {
        return Err(Error::Empty("histogram needs at least one score"));
    };
    let (lo, hi) = all().fold((first, first), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if !(hi > lo) {
        return Ok(Histogram {
            bin_edges: vec![lo, hi],
            counts_g: vec![scores_g.len() as u64],
            counts_e: vec![scores_e.len() as u64],
            degenerate: true,
        });
    }
    let width = (hi - lo) / T::count(bins);
    let bin_edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * T::count(k) })
        .collect();
    let count = |xs: &[T]| {
        let mut counts = vec![0u64; bins];
        for &x in xs {
            let k = ((x - lo) / width).floor().to_usize().unwrap_or(0).min(bins - 1);
            counts[k] += 1;
        }
        counts
    };
    Ok(Histogram {
        bin_edges,
        counts_g: count(scores_g),
        counts_e: count(scores_e),
        degenerate: false,
    })
}

/// A filter together with the threshold fitted on calibration data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration<T> {
    pub filter: FilterSpec<T>,
    pub threshold: Threshold<T>,
    /// Fidelity reached on the calibration batch.
    pub fidelity: T,
}

impl<T: Scalar> Calibration<T> {
    pub fn score(&self, record: &[Complex<T>]) -> Result<T> {
        apply_filter(record, &self.filter)
    }

    pub fn reads_excited(&self, record: &[Complex<T>]) -> Result<bool> {
        Ok(self.threshold.reads_excited(self.score(record)?))
    }
}

fn prefix_sums<T: Scalar>(record: &[Complex<T>]) -> Vec<Complex<T>> {
    let mut acc = Complex::new(T::zero(), T::zero());
    let mut out = Vec::with_capacity(record.len() + 1);
    out.push(acc);
    for r in record {
        acc = acc + r;
        out.push(acc);
    }
    out
}

fn empirical_error<T: Scalar>(g: &[T], e: &[T]) -> Result<(Threshold<T>, T)> {
    let threshold = fit_threshold(g, e)?;
    let count = |xs: &[T], excited: bool| xs.iter().filter(|&&s| threshold.reads_excited(s) == excited).count();
    let err = T::count(count(g, true)) / T::count(g.len()) + T::count(count(e, false)) / T::count(e.len());
    Ok((threshold, err))
}

/// Grid search over boxcar start and length (multiples of `grid` seconds) and the
/// demodulation phase, maximising the empirical fidelity of the calibration records.
/// Among equally good windows the longest, then the earliest, wins.
///
/// For every window the phase is the argument of the mean e−g separation, which
/// maximises |μ_g − μ_e| for that window.
pub fn optimize_boxcar<T: Scalar>(
    records_g: &[Vec<Complex<T>>],
    records_e: &[Vec<Complex<T>>],
    sample_dt: T,
    grid: T,
) -> Result<Calibration<T>> {
    if records_g.is_empty() || records_e.is_empty() {
        return Err(Error::Empty("calibration records"));
    }
    let len = records_g[0].len();
    if len == 0 || records_g.iter().chain(records_e).any(|r| r.len() != len) {
        return Err(invalid("records", "calibration records must share a non-zero length"));
    }
    let step = (grid / sample_dt).round().to_usize().unwrap_or(1).max(1);
    let mut windows = Vec::new();
    for start in (0..len).step_by(step) {
        let mut lengths: Vec<usize> = (step..=len - start).step_by(step).collect();
        if lengths.last() != Some(&(len - start)) {
            lengths.push(len - start);
        }
        windows.extend(lengths.into_iter().map(|l| (start, l)));
    }

    let sums_g: Vec<_> = records_g.par_iter().map(|r| prefix_sums(r)).collect();
    let sums_e: Vec<_> = records_e.par_iter().map(|r| prefix_sums(r)).collect();
    let zero = Complex::new(T::zero(), T::zero());

    type Scored<T> = (usize, T, T, Threshold<T>);
    let evaluated: Vec<Result<Scored<T>>> = windows
        .par_iter()
        .enumerate()
        .map(|(w, &(start, length))| {
            let window = |s: &Vec<Complex<T>>| s[start + length] - s[start];
            let mean_of =
                |sums: &[Vec<Complex<T>>]| sums.iter().map(window).fold(zero, |a, b| a + b) / T::count(sums.len());
            let separation = mean_of(&sums_e) - mean_of(&sums_g);
            let phase = separation.arg();
            let rot = Complex::from_polar(T::one(), -phase);
            let scale = T::count(length);
            let scores =
                |sums: &[Vec<Complex<T>>]| sums.iter().map(|s| (rot * window(s)).re / scale).collect::<Vec<T>>();
            let (threshold, err) = empirical_error(&scores(&sums_g), &scores(&sums_e))?;
            Ok((w, err, phase, threshold))
        })
        .collect();

    let mut best: Option<(usize, T, T, Threshold<T>)> = None;
    for item in evaluated {
        let item = item?;
        // Equal errors favour the longer window.
        let longer = |b: &(usize, T, T, Threshold<T>)| windows[item.0].1 > windows[b.0].1;
        if best
            .as_ref()
            .is_none_or(|b| item.1 < b.1 || (item.1 == b.1 && longer(b)))
        {
            best = Some(item);
        }
    }
    let (w, err, phase, threshold) = best.expect("at least one window");
    let (start, length) = windows[w];
    Ok(Calibration {
        filter: FilterSpec::boxcar(
            T::count(start) * sample_dt,
            T::count(length) * sample_dt,
            phase,
            sample_dt,
        ),
        threshold,
        fidelity: T::one() - err,
    })
}

/// Matched filter over the whole record with weights ∝ mean(e) − mean(g).
pub fn calibrate_matched<T: Scalar>(
    records_g: &[Vec<Complex<T>>],
    records_e: &[Vec<Complex<T>>],
    sample_dt: T,
) -> Result<Calibration<T>> {
    if records_g.is_empty() || records_e.is_empty() {
        return Err(Error::Empty("calibration records"));
    }
    let len = records_g[0].len();
    let mean_trace = |rs: &[Vec<Complex<T>>]| {
        let mut acc = vec![Complex::new(T::zero(), T::zero()); len];
        for r in rs {
            for (a, x) in acc.iter_mut().zip(r) {
                *a = *a + x;
            }
        }
        let n = T::count(rs.len());
        acc.into_iter().map(|a| a / n).collect::<Vec<_>>()
    };
    let (mg, me) = (mean_trace(records_g), mean_trace(records_e));
    let weights = me.iter().zip(&mg).map(|(e, g)| e - g).collect();
    let filter = FilterSpec::matched(weights, T::zero(), sample_dt)?;
    let scores = |rs: &[Vec<Complex<T>>]| rs.iter().map(|r| apply_filter(r, &filter)).collect::<Result<Vec<T>>>();
    let (threshold, err) = empirical_error(&scores(records_g)?, &scores(records_e)?)?;
    Ok(Calibration {
        filter,
        threshold,
        fidelity: T::one() - err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussians(n: usize, mean: f64, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| mean + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Independent oracle: scan a dense grid of thresholds and keep the best.
    fn brute_force_threshold(g: &[f64], e: &[f64]) -> (f64, f64) {
        let lo = g.iter().chain(e).copied().fold(f64::INFINITY, f64::min);
        let hi = g.iter().chain(e).copied().fold(f64::NEG_INFINITY, f64::max);
        let mut best = (f64::INFINITY, lo, lo);
        for k in 0..=20_000 {
            let t = lo + (hi - lo) * k as f64 / 20_000.0;
            let err = g.iter().filter(|&&s| s > t).count() as f64 / g.len() as f64
                + e.iter().filter(|&&s| s <= t).count() as f64 / e.len() as f64;
            if err < best.0 {
                best = (err, t, t);
            } else if err == best.0 {
                best.2 = t;
            }
        }
        (best.0, (best.1 + best.2) / 2.0)
    }

    #[test]
    fn constant_and_zero_records() {
        let rec = vec![Complex::new(2.0, -1.0); 50];
        for phase in [0.0, 0.7, -2.0] {
            let spec = FilterSpec::boxcar(5e-9, 20e-9, phase, 1e-9);
            let expected = (Complex::from_polar(1.0, -phase) * Complex::new(2.0, -1.0)).re;
            assert_relative_eq!(apply_filter(&rec, &spec).unwrap(), expected, max_relative = 1e-12);
        }
        let zero = vec![Complex::new(0.0, 0.0); 50];
        assert_eq!(
            apply_filter(&zero, &FilterSpec::boxcar(0.0, 50e-9, 0.3, 1e-9)).unwrap(),
            0.0
        );
    }

    #[test]
    fn window_out_of_bounds() {
        let rec = vec![Complex::new(1.0, 0.0); 10];
        let spec = FilterSpec::boxcar(5e-9, 10e-9, 0.0, 1e-9);
        assert!(matches!(
            apply_filter(&rec, &spec),
            Err(Error::WindowOutOfBounds { .. })
        ));
    }

    #[test]
    fn matched_filter_beats_boxcar_at_equal_noise() {
        // Noiseless traces with a ring-up so the separation is not constant.
        let n = 200;
        let dt = 1e-9;
        let g: Vec<Complex<f64>> = (0..n)
            .map(|k| Complex::new(0.3, 1.0) * (1.0 - (-(k as f64) / 30.0).exp()))
            .collect();
        let e: Vec<Complex<f64>> = (0..n)
            .map(|k| Complex::new(-0.8, 0.6) * (1.0 - (-(k as f64) / 30.0).exp()))
            .collect();
        let matched = calibrate_matched(std::slice::from_ref(&g), std::slice::from_ref(&e), dt).unwrap();
        let sep_matched = apply_filter(&e, &matched.filter).unwrap() - apply_filter(&g, &matched.filter).unwrap();

        // Boxcar noise std with per-sample variance s is √(s/N); matched with unit energy is √s.
        let s: f64 = 1.0;
        let best_boxcar = (1..=n)
            .flat_map(|len| (0..=n - len).step_by(10).map(move |start| (start, len)))
            .map(|(start, len)| {
                let d: Complex<f64> = (start..start + len).map(|k| e[k] - g[k]).sum();
                let spec = FilterSpec::boxcar(start as f64 * dt, len as f64 * dt, d.arg(), dt);
                let sep = apply_filter(&e, &spec).unwrap() - apply_filter(&g, &spec).unwrap();
                sep / (s / len as f64).sqrt()
            })
            .fold(0.0, f64::max);
        assert!(sep_matched / s.sqrt() >= best_boxcar);
        let energy: f64 = matched
            .filter
            .weights
            .as_ref()
            .unwrap()
            .iter()
            .map(|w| w.norm_sqr())
            .sum();
        assert_relative_eq!(energy, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn separated_gaussians_threshold_midway() {
        let g = gaussians(20_000, 0.0, 1.0, 1);
        let e = gaussians(20_000, 10.0, 1.0, 2);
        let t = fit_threshold(&g, &e).unwrap();
        assert!((t.value - 5.0).abs() < 0.2, "{}", t.value);
        assert!(t.excited_above && !t.zero_separability);
    }

    #[test]
    fn threshold_matches_brute_force_scan() {
        let g = gaussians(3000, 0.0, 1.0, 3);
        let e = gaussians(3000, 2.5, 1.3, 4);
        let (oracle_err, _) = brute_force_threshold(&g, &e);
        let t = fit_threshold(&g, &e).unwrap();
        let report = compute_report(&g, &e, t.value).unwrap();
        assert!(report.error_g + report.error_e <= oracle_err + 1e-12);
    }

    #[test]
    fn threshold_follows_shift_of_excited_class() {
        let g = gaussians(50_000, 0.0, 1.0, 5);
        let e0 = gaussians(50_000, 4.0, 1.0, 6);
        let t0 = fit_threshold(&g, &e0).unwrap().value;
        let e1: Vec<f64> = e0.iter().map(|x| x + 1.0).collect();
        let t1 = fit_threshold(&g, &e1).unwrap().value;
        assert!((t1 - t0 - 0.5).abs() < 0.15, "shift {}", t1 - t0);
    }

    #[test]
    fn identical_distributions_flag_zero_separability() {
        let s = gaussians(500, 1.0, 1.0, 7);
        let t = fit_threshold(&s, &s).unwrap();
        assert!(t.zero_separability);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert_relative_eq!(t.value, mean, max_relative = 1e-12);
    }

    #[test]
    fn reference_fidelity_arithmetic() {
        let report = |eg: f64, ee: f64| {
            let n = 1000;
            let g: Vec<f64> = (0..n)
                .map(|i| if (i as f64) < eg * n as f64 { 1.0 } else { -1.0 })
                .collect();
            let e: Vec<f64> = (0..n)
                .map(|i| if (i as f64) < ee * n as f64 { -1.0 } else { 1.0 })
                .collect();
            compute_report(&g, &e, 0.0).unwrap()
        };
        let raw = report(0.028, 0.053);
        assert_relative_eq!(raw.fidelity, 0.919, max_relative = 1e-12);
        let selected = report(0.010, 0.047);
        assert_relative_eq!(selected.fidelity, 0.943, max_relative = 1e-12);
    }

    #[test]
    fn constant_lists_have_undefined_snr() {
        let r = compute_report(&[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap();
        assert!(!r.snr_defined);
        assert_eq!(r.snr_meas, 0.0);
    }

    #[test]
    fn gaussian_bound_values() {
        assert!((gaussian_fidelity_bound(3.3f64) - 0.99903).abs() < 1e-5);
        assert_eq!(gaussian_fidelity_bound(0.0), 0.0);
        assert_eq!(gaussian_fidelity_bound(f64::INFINITY), 1.0);
        assert!((gaussian_fidelity_bound(3.3f32) - 0.99903).abs() < 1e-4);
    }

    #[test]
    fn histogram_edge_cases() {
        let h = build_histogram(&[0.0], &[1.0], 4).unwrap();
        assert_eq!(h.counts_g.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts_e.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts_e[3], 1);
        let d = build_histogram(&[2.0, 2.0], &[2.0], 10).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.counts_g, vec![2]);
        assert!(build_histogram(&[1.0], &[2.0], 1).is_err());
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn gaussian_infidelity_converges_to_bound() {
        // SNR 2 keeps error counts large enough for a tight check.
        let (n, snr) = (100_000, 2.0);
        let g = gaussians(n, 0.0, 1.0, 8);
        let e = gaussians(n, 2.0 * snr, 1.0, 9);
        let t = fit_threshold(&g, &e).unwrap();
        let r = compute_report(&g, &e, t.value).unwrap();
        let expected = 1.0 - gaussian_fidelity_bound(snr);
        let q = expected / 2.0;
        let sigma = (2.0 * q * (1.0 - q) / n as f64).sqrt();
        assert!((1.0 - r.fidelity - expected).abs() < 3.0 * sigma);
    }

    #[test]
    fn boxcar_search_finds_window_after_ring_up() {
        let n = 100;
        let dt = 1e-9;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let trace = |level: f64, rng: &mut ChaCha8Rng| -> Vec<Complex<f64>> {
            (0..n)
                .map(|k| {
                    let signal = if k < 40 { 0.0 } else { level };
                    Complex::new(
                        signal + rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    )
                })
                .collect()
        };
        // Weak enough that neither window saturates the fidelity.
        let g: Vec<_> = (0..1500).map(|_| trace(-0.15, &mut rng)).collect();
        let e: Vec<_> = (0..1500).map(|_| trace(0.15, &mut rng)).collect();
        let cal = optimize_boxcar(&g, &e, dt, 5e-9).unwrap();
        assert!(cal.filter.window_start >= 30e-9, "{:?}", cal.filter);
        assert!(cal.fidelity > 0.65);
        assert!(cal.filter.quadrature_phase.abs() < 0.3);
    }

    #[test]
    fn noiseless_ties_pick_the_longest_window() {
        let g = vec![vec![Complex::new(-1.0f64, 0.0); 40]; 3];
        let e = vec![vec![Complex::new(1.0, 0.0); 40]; 3];
        let cal = optimize_boxcar(&g, &e, 1e-9, 5e-9).unwrap();
        assert_eq!(cal.fidelity, 1.0);
        assert_eq!(cal.filter.window_start, 0.0);
        assert!((cal.filter.window_length - 40e-9).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn fidelity_and_threshold_affine_invariant(a in 0.1f64..10.0, b in -100.0f64..100.0, seed in 0u64..1000) {
            let g = gaussians(300, 0.0, 1.0, seed);
            let e = gaussians(300, 2.0, 1.5, seed + 7919);
            let t = fit_threshold(&g, &e).unwrap();
            let r = compute_report(&g, &e, t.value).unwrap();
            let map = |xs: &[f64]| xs.iter().map(|x| a * x + b).collect::<Vec<_>>();
            let (g2, e2) = (map(&g), map(&e));
            let t2 = fit_threshold(&g2, &e2).unwrap();
            let r2 = compute_report(&g2, &e2, t2.value).unwrap();
            prop_assert_eq!(r.fidelity, r2.fidelity);
            prop_assert!((t2.value - (a * t.value + b)).abs() < 1e-9 * (1.0 + t2.value.abs()));
        }

        #[test]
        fn snr_symmetric_under_label_exchange(seed in 0u64..1000) {
            let g = gaussians(200, 0.0, 1.0, seed);
            let e = gaussians(200, 1.0, 2.0, seed + 1);
            let r = compute_report(&g, &e, 0.5).unwrap();
            let s = compute_report(&e, &g, 0.5).unwrap();
            prop_assert!((r.snr_meas - s.snr_meas).abs() < 1e-12);
        }

        #[test]
        fn histogram_conserves_counts(ng in 1usize..300, ne in 1usize..300, bins in 2usize..60, seed in 0u64..100) {
            let g = gaussians(ng, 0.0, 1.0, seed);
            let e = gaussians(ne, 1.0, 1.0, seed + 3);
            let h = build_histogram(&g, &e, bins).unwrap();
            prop_assert_eq!(h.counts_g.iter().sum::<u64>(), ng as u64);
            prop_assert_eq!(h.counts_e.iter().sum::<u64>(), ne as u64);
            prop_assert!(h.bin_edges.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
