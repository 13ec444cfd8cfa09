//! Least-squares fit of `y = A·exp(−x/τ) + B`.
//!
//! For fixed τ the model is linear in (A, B), so the fit reduces to a bounded
//! one-dimensional search over ln τ: a coarse log grid followed by golden-section
//! refinement, each candidate solved exactly for (A, B).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Default, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit<T> {
    pub amplitude: T,
    pub decay_time: T,
    pub offset: T,
    /// Euclidean norm of the residuals.
    pub residual_norm: T,
    /// The optimum sits on a search bound; typically the data do not decay.
    pub at_bound: bool,
}

impl<T: Scalar> ExpFit<T> {
    pub fn eval(&self, x: T) -> T {
        self.amplitude * (-x / self.decay_time).exp() + self.offset
    }
}

struct Linear<T> {
    amplitude: T,
    offset: T,
    sse: T,
}

fn solve_linear<T: Scalar>(x: &[T], y: &[T], tau: T) -> Linear<T> {
    let x0 = x[0];
    let n = T::count(x.len());
    let (mut sb, mut sbb, mut sy, mut sby) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (&xi, &yi) in x.iter().zip(y) {
        let b = (-(xi - x0) / tau).exp();
        sb = sb + b;
        sbb = sbb + b * b;
        sy = sy + yi;
        sby = sby + b * yi;
    }
    let det = n * sbb - sb * sb;
    let (a_shift, offset) = if det > T::lit(1e-12) * n * sbb {
        ((n * sby - sb * sy) / det, (sbb * sy - sb * sby) / det)
    } else {
        (T::zero(), sy / n)
    };
    let sse = x.iter().zip(y).fold(T::zero(), |acc, (&xi, &yi)| {
        let r = yi - (a_shift * (-(xi - x0) / tau).exp() + offset);
        acc + r * r
    });
    // Undo the x0 shift: A·e^{−x/τ} = A'·e^{−(x−x0)/τ}.
    let amplitude = if a_shift == T::zero() {
        T::zero()
    } else {
        a_shift * (x0 / tau).exp()
    };
    Linear { amplitude, offset, sse }
}

/// Fit with τ searched on the default bracket `[span·10⁻³, span·10³]`, `span = x_max − x_min`.
pub fn fit_exponential<T: Scalar>(x: &[T], y: &[T]) -> Result<ExpFit<T>> {
    check_inputs(x, y)?;
    let span = x[x.len() - 1] - x[0];
    fit_exponential_bounded(x, y, span * T::lit(1e-3), span * T::lit(1e3))
}

fn check_inputs<T: Scalar>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid("y", "x and y lengths differ"));
    }
    if x.len() < 4 {
        return Err(Error::Empty("exponential fit needs at least 4 points"));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("x", "must be strictly ascending"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("y", "values must be finite"));
    }
    Ok(())
}

pub fn fit_exponential_bounded<T: Scalar>(x: &[T], y: &[T], tau_min: T, tau_max: T) -> Result<ExpFit<T>> {
    check_inputs(x, y)?;
    if !(tau_min > T::zero()) || !(tau_max > tau_min) {
        return Err(invalid("tau bounds", "need 0 < tau_min < tau_max"));
    }
    const GRID: usize = 400;
    let (u_lo, u_hi) = (tau_min.ln(), tau_max.ln());
    let at = |k: usize| u_lo + (u_hi - u_lo) * T::count(k) / T::count(GRID);
    let sse = |u: T| solve_linear(x, y, u.exp()).sse;

    let mut best_k = 0;
    let mut best = T::infinity();
    for k in 0..=GRID {
        let s = sse(at(k));
        if s < best {
            best = s;
            best_k = k;
        }
    }

    // Golden-section refinement on the bracketing grid cells.
    let (mut a, mut b) = (at(best_k.saturating_sub(1)), at((best_k + 1).min(GRID)));
    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - (b - a) * inv_phi;
    let mut d = a + (b - a) * inv_phi;
    let (mut fc, mut fd) = (sse(c), sse(d));
    for _ in 0..200 {
        if (b - a).abs() < T::lit(1e-13) * (T::one() + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * inv_phi;
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * inv_phi;
            fd = sse(d);
        }
    }
    let mut u = (a + b) / T::lit(2.0);
    if sse(at(best_k)) < sse(u) {
        u = at(best_k);
    }
    let tau = u.exp();
    let lin = solve_linear(x, y, tau);
    Ok(ExpFit {
        amplitude: lin.amplitude,
        decay_time: tau,
        offset: lin.offset,
        residual_norm: lin.sse.sqrt(),
        at_bound: best_k == 0 || best_k == GRID,
    })
}
