//! Nonlinear conjugate gradient with an exact-ish scalar line search.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Update rule for the conjugacy coefficient `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgVariant {
    /// Polak-Ribiere, restarted (`beta = 0`) whenever `beta < 0`.
    #[default]
    PolakRibiere,
    /// Fletcher's conjugate descent, `beta = |g+|^2 / (-d . g)`.
    ConjugateDescent,
}

/// Stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Stop after the first iteration whose decrease is below `rel_tol`
    /// times the previous value.
    RelativeDecrease { rel_tol: f64 },
    /// Stop when `|grad| < grad_tol (1 + |value|)`, or when neither the
    /// current direction nor a steepest-descent restart decreases the value
    /// (the floating-point floor).
    Gradient { grad_tol: f64 },
}

impl Termination {
    /// Relative power decrease below 0.5 percent.
    pub const PAPER: Termination = Termination::RelativeDecrease { rel_tol: 0.005 };
    pub const TIGHT: Termination = Termination::Gradient { grad_tol: 1e-9 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgOptions {
    pub variant: CgVariant,
    pub termination: Termination,
    pub max_iterations: usize,
    /// Relative tolerance on the line-search step length.
    pub line_tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            variant: CgVariant::PolakRibiere,
            termination: Termination::TIGHT,
            max_iterations: 500,
            line_tol: 1e-10,
        }
    }
}

impl CgOptions {
    pub fn paper() -> Self {
        CgOptions {
            termination: Termination::PAPER,
            ..Default::default()
        }
    }

    pub fn tight() -> Self {
        CgOptions::default()
    }

    pub fn with_relative_decrease(rel_tol: f64) -> Self {
        CgOptions {
            termination: Termination::RelativeDecrease { rel_tol },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult<const N: usize> {
    pub point: SVector<f64, N>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Minimizes a smooth function given as `x -> (value, gradient)`.
pub fn minimize<const N: usize, F>(objective: F, start: SVector<f64, N>, opts: &CgOptions) -> Result<CgResult<N>>
where
    F: Fn(&SVector<f64, N>) -> (f64, SVector<f64, N>),
{
    let mut x = start;
    let (mut f, mut g) = objective(&x);
    let mut d = -g;
    let mut iterations = 0;
    let mut step_guess = 1.0 / g.norm().max(f64::MIN_POSITIVE);
    let mut stalled = false;

    let converged = |f: f64, g: &SVector<f64, N>| match opts.termination {
        Termination::Gradient { grad_tol, .. } => g.norm() < grad_tol * (1.0 + f.abs()),
        Termination::RelativeDecrease { .. } => g.norm() == 0.0,
    };

    while !converged(f, &g) {
        if iterations >= opts.max_iterations {
            return Err(Error::MaxIterations(opts.max_iterations));
        }
        iterations += 1;

        if d.dot(&g) >= 0.0 {
            d = -g;
        }
        let step = line_search(&objective, &x, &d, f, step_guess, opts.line_tol);
        let x_new = x + d * step;
        let (f_new, g_new) = objective(&x_new);
        let decrease = f - f_new;
        // at the rounding floor a step may tie on value but still improve the gradient
        let accepted = decrease > 0.0
            || (step > 0.0 && decrease >= -4.0 * f64::EPSILON * f.abs() && g_new.norm() < g.norm());

        let small = match opts.termination {
            Termination::RelativeDecrease { rel_tol } => decrease < rel_tol * f.abs(),
            Termination::Gradient { .. } => !accepted,
        };
        let g_prev = g;
        if accepted {
            step_guess = step;
            x = x_new;
            f = f_new;
            g = g_new;
        }

        match opts.termination {
            Termination::RelativeDecrease { .. } => {
                if small {
                    break;
                }
            }
            Termination::Gradient { .. } => {
                if small {
                    if stalled {
                        break;
                    }
                    // one steepest-descent restart before giving up
                    stalled = true;
                    d = -g;
                    continue;
                }
                stalled = false;
            }
        }
        d = next_direction(opts.variant, &g, &d, &g_prev);
    }

    Ok(CgResult {
        point: x,
        value: f,
        gradient_norm: g.norm(),
        iterations,
    })
}

fn next_direction<const N: usize>(
    variant: CgVariant,
    g: &SVector<f64, N>,
    d_prev: &SVector<f64, N>,
    g_prev: &SVector<f64, N>,
) -> SVector<f64, N> {
    let beta = match variant {
        CgVariant::PolakRibiere => {
            let denom = g_prev.norm_squared();
            if denom == 0.0 {
                0.0
            } else {
                (g.dot(&(g - g_prev)) / denom).max(0.0)
            }
        }
        CgVariant::ConjugateDescent => {
            let denom = -d_prev.dot(g_prev);
            if denom <= 0.0 {
                0.0
            } else {
                g.norm_squared() / denom
            }
        }
    };
    -g + d_prev * beta
}

const GOLDEN: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105;

/// Approximately minimizes `phi(t)` over `t >= 0`, given `phi(0) = phi0`.
/// Returns 0 when no decrease can be found.
pub fn line_minimize<F: Fn(f64) -> f64>(phi: F, phi0: f64, initial: f64, rel_tol: f64) -> f64 {
    let Some((a, b, c)) = bracket(&phi, phi0, initial) else {
        return 0.0;
    };
    brent(&phi, a, b, c, rel_tol).0
}

/// Line search along `d` from `x`: value-based bracketing and Brent, then a
/// regula-falsi refinement on the directional derivative inside the final
/// bracket. Values alone cannot place the minimizer closer than about
/// `sqrt(eps)`; the derivative can.
fn line_search<const N: usize, F>(
    objective: &F,
    x: &SVector<f64, N>,
    d: &SVector<f64, N>,
    f0: f64,
    initial: f64,
    rel_tol: f64,
) -> f64
where
    F: Fn(&SVector<f64, N>) -> (f64, SVector<f64, N>),
{
    let phi = |t: f64| objective(&(x + d * t)).0;
    let dphi = |t: f64| objective(&(x + d * t)).1.dot(d);
    let floor = 4.0 * f64::EPSILON * f0.abs();
    if let Some((a, b, c)) = bracket(&phi, f0, initial) {
        let (t, lo, hi) = brent(&phi, a, b, c, rel_tol);
        let f_t = phi(t);
        return match refine_stationary(&dphi, lo, hi) {
            Some(r) if phi(r) <= f_t + floor => r,
            _ => t,
        };
    }
    // No value decrease is visible: values are at the rounding floor, but the
    // directional derivative may still locate the minimizer.
    let mut hi = if initial.is_finite() && initial > 0.0 { initial } else { 1.0 };
    for _ in 0..100 {
        if dphi(hi) > 0.0 {
            break;
        }
        hi *= 2.0;
    }
    match refine_stationary(&dphi, 0.0, hi) {
        Some(r) if phi(r) <= f0 + floor => r,
        _ => 0.0,
    }
}

/// Illinois iteration for a sign change of `dphi` near `[lo, hi]`. The
/// interval is widened (keeping `lo >= 0`) until it brackets one.
fn refine_stationary<F: Fn(f64) -> f64>(dphi: &F, mut lo: f64, mut hi: f64) -> Option<f64> {
    let mut d_lo = dphi(lo);
    let mut d_hi = dphi(hi);
    let mut width = (hi - lo).max(f64::EPSILON * hi.abs());
    for _ in 0..80 {
        if d_lo < 0.0 && d_hi > 0.0 {
            break;
        }
        if d_hi <= 0.0 {
            lo = hi;
            d_lo = d_hi;
            hi += width;
            d_hi = dphi(hi);
        } else {
            hi = lo;
            d_hi = d_lo;
            lo = (lo - width).max(0.0);
            d_lo = dphi(lo);
            if lo == 0.0 && d_lo >= 0.0 {
                return None;
            }
        }
        width *= 2.0;
    }
    if !(d_lo < 0.0 && d_hi > 0.0) {
        return None;
    }
    let mut side = 0i8;
    let mut t = lo;
    for _ in 0..100 {
        t = (lo * d_hi - hi * d_lo) / (d_hi - d_lo);
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        let dt = dphi(t);
        if dt == 0.0 || (hi - lo) <= 4.0 * f64::EPSILON * t.abs() {
            break;
        }
        if dt < 0.0 {
            lo = t;
            d_lo = dt;
            if side == -1 {
                d_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            d_hi = dt;
            if side == 1 {
                d_lo *= 0.5;
            }
            side = 1;
        }
    }
    Some(t)
}

/// Returns `(a, b, c)` with `a < b < c`, `phi(b) < phi(a)` and `phi(b) <= phi(c)`.
fn bracket<F: Fn(f64) -> f64>(phi: &F, phi0: f64, initial: f64) -> Option<(f64, f64, f64)> {
    let mut t = if initial.is_finite() && initial > 0.0 { initial } else { 1.0 };
    let mut ft = phi(t);
    if !(ft < phi0) {
        // shrink until the value drops below phi(0)
        for _ in 0..200 {
            let c = t;
            t *= 0.1;
            ft = phi(t);
            if ft < phi0 {
                return Some((0.0, t, c));
            }
        }
        return None;
    }
    let mut a = 0.0;
    let (mut b, mut fb) = (t, ft);
    for _ in 0..200 {
        let c = b + GOLDEN * (b - a);
        let fc = phi(c);
        if !fc.is_finite() || fc >= fb {
            return Some((a, b, c));
        }
        a = b;
        b = c;
        fb = fc;
    }
    None
}

/// Brent's parabolic/golden-section minimizer on the bracket `(a, b, c)`.
/// Returns the minimizer and the final bracket.
fn brent<F: Fn(f64) -> f64>(phi: &F, a: f64, b: f64, c: f64, rel_tol: f64) -> (f64, f64, f64) {
    let (mut lo, mut hi) = if a < c { (a, c) } else { (c, a) };
    let mut x = b;
    let mut w = b;
    let mut v = b;
    let mut fx = phi(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let tol1 = rel_tol * x.abs() + 1e-300;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (hi - lo) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (lo - x) && p < q * (hi - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = tol1.copysign(mid - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { lo - x } else { hi - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = phi(u);
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, lo, hi)
}
