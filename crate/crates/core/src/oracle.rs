//! Independent reference optimizer.
//!
//! Multi-start penalty method on `g(x) + pi * sum_i max(0, 1 - f_i(x))^2`
//! with an escalating penalty, followed by a Newton polish of the KKT system
//! on the detected active set and a final rescale onto the feasible region.
//! It shares nothing with the candidate solver beyond the quadratic forms.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduction::{ReducedPoint, ReducedProblem};

/// Returned points satisfy `f_i >= 1 - FEASIBILITY_TOL`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const BFGS_MAX_ITER: usize = 2000;
const POLISH_MAX_ITER: usize = 40;
/// Constraints with `f_i` below `1 + ACTIVE_GUESS` after the penalty rounds
/// are candidates for the active set.
const ACTIVE_GUESS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub n_starts: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_rounds: usize,
    pub inner_tol: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_starts: 64,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_rounds: 6,
            inner_tol: 1e-10,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn with_seed(seed: u64) -> Self {
        OracleConfig { seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| Err(Error::InvalidParameter { name, reason: reason.to_string() });
        if self.n_starts == 0 {
            return bad("n_starts", "must be positive");
        }
        if self.penalty_rounds == 0 {
            return bad("penalty_rounds", "must be positive");
        }
        if !(self.penalty_init > 0.0) {
            return bad("penalty_init", "must be positive");
        }
        if !(self.penalty_growth > 1.0) {
            return bad("penalty_growth", "must exceed 1");
        }
        if !(self.inner_tol > 0.0) {
            return bad("inner_tol", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub power_watts: f64,
    pub x: ReducedPoint,
    /// Imaginary part; zero for the real oracle.
    pub y: ReducedPoint,
    /// Index of the start that produced the returned point.
    pub start: usize,
    /// Number of starts that reached a feasible point.
    pub feasible_starts: usize,
}

/// Quadratic program `min x^T M x  s.t.  x^T Q_i x >= 1` in `N` real
/// dimensions.
struct Qcqp<const N: usize> {
    m: SMatrix<f64, N, N>,
    q: [SMatrix<f64, N, N>; 2],
}

impl<const N: usize> Qcqp<N> {
    fn power(&self, x: &SVector<f64, N>) -> f64 {
        x.dot(&(self.m * x))
    }

    fn constraints(&self, x: &SVector<f64, N>) -> [f64; 2] {
        [x.dot(&(self.q[0] * x)), x.dot(&(self.q[1] * x))]
    }

    fn penalized(&self, x: &SVector<f64, N>, pi: f64) -> (f64, SVector<f64, N>) {
        let mx = self.m * x;
        let mut value = x.dot(&mx);
        let mut grad = mx * 2.0;
        for q in &self.q {
            let qx = q * x;
            let viol = 1.0 - x.dot(&qx);
            if viol > 0.0 {
                value += pi * viol * viol;
                grad -= qx * (4.0 * pi * viol);
            }
        }
        (value, grad)
    }

    /// Scales `x` so the smallest constraint value is exactly 1.
    fn rescale(&self, x: &SVector<f64, N>) -> Option<SVector<f64, N>> {
        let f = self.constraints(x);
        let low = f[0].min(f[1]);
        if !(low > 0.0) || !low.is_finite() {
            return None;
        }
        let y = x / low.sqrt();
        let f = self.constraints(&y);
        (f[0].min(f[1]) >= 1.0 - FEASIBILITY_TOL).then_some(y)
    }

    /// Newton iterations on `M x = sum_{i in S} l_i Q_i x`, `x^T Q_i x = 1`
    /// with a pseudo-inverse step (the complex problem has a rotational null
    /// direction).
    fn polish(&self, x0: &SVector<f64, N>, active: &[usize]) -> Option<SVector<f64, N>> {
        let k = active.len();
        let dim = N + k;
        let mut x = *x0;
        let mut lam = self.initial_multipliers(&x, active)?;
        let residual = |x: &SVector<f64, N>, lam: &[f64]| {
            let mut r = DVector::zeros(dim);
            let mut stat = self.m * x;
            for (j, &i) in active.iter().enumerate() {
                stat -= self.q[i] * x * lam[j];
            }
            for n in 0..N {
                r[n] = stat[n];
            }
            for (j, &i) in active.iter().enumerate() {
                r[N + j] = x.dot(&(self.q[i] * x)) - 1.0;
            }
            r
        };
        let mut r = residual(&x, &lam);
        for _ in 0..POLISH_MAX_ITER {
            let rnorm = r.norm();
            if rnorm <= 1e-15 * (1.0 + self.power(&x)) {
                break;
            }
            let mut jac = DMatrix::zeros(dim, dim);
            let mut hess = self.m;
            for (j, &i) in active.iter().enumerate() {
                hess -= self.q[i] * lam[j];
            }
            for a in 0..N {
                for b in 0..N {
                    jac[(a, b)] = hess[(a, b)];
                }
            }
            for (j, &i) in active.iter().enumerate() {
                let qx = self.q[i] * x;
                for a in 0..N {
                    jac[(a, N + j)] = -qx[a];
                    jac[(N + j, a)] = 2.0 * qx[a];
                }
            }
            let pinv = jac.pseudo_inverse(1e-13).ok()?;
            let step = -(pinv * &r);
            // backtrack on the residual norm
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let xn = x + SVector::<f64, N>::from_iterator(step.rows(0, N).iter().map(|v| v * t));
                let ln: Vec<f64> = lam.iter().enumerate().map(|(j, l)| l + t * step[N + j]).collect();
                let rn = residual(&xn, &ln);
                if rn.norm() < rnorm {
                    x = xn;
                    lam = ln;
                    r = rn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (lam.iter().all(|&l| l >= 0.0) && x.iter().all(|v| v.is_finite())).then_some(x)
    }

    /// Least-squares multipliers for `M x = sum l_i Q_i x`; `None` if any is
    /// negative (the guessed set is not the active set of a KKT point).
    fn initial_multipliers(&self, x: &SVector<f64, N>, active: &[usize]) -> Option<Vec<f64>> {
        let k = active.len();
        let mut cols = DMatrix::zeros(N, k);
        for (j, &i) in active.iter().enumerate() {
            cols.set_column(j, &DVector::from_iterator(N, (self.q[i] * x).iter().copied()));
        }
        let rhs = DVector::from_iterator(N, (self.m * x).iter().copied());
        let lam = cols.svd(true, true).solve(&rhs, 1e-14).ok()?;
        lam.iter().all(|&l| l >= 0.0).then(|| lam.iter().copied().collect())
    }

    /// The penalty weight is `penalty_init` times a reference power of the
    /// start: `g` at the start pushed onto the boundary when both constraint
    /// values are positive there, otherwise `g` at the start.
    fn local_solve(&self, start: SVector<f64, N>, cfg: &OracleConfig) -> Option<SVector<f64, N>> {
        let (mut x, reference) = match self.rescale(&start) {
            Some(b) => (b, self.power(&b)),
            None => (start, self.power(&start)),
        };
        let mut pi = cfg.penalty_init * reference.max(f64::MIN_POSITIVE);
        for _ in 0..cfg.penalty_rounds {
            x = bfgs(|v| self.penalized(v, pi), x, cfg.inner_tol);
            pi *= cfg.penalty_growth;
        }
        let f = self.constraints(&x);
        let near: Vec<usize> = (0..2).filter(|&i| f[i] < 1.0 + ACTIVE_GUESS).collect();
        let mut sets: Vec<Vec<usize>> = near.iter().map(|&i| vec![i]).collect();
        if near.len() == 2 {
            sets.push(near.clone());
        }
        let mut best = self.rescale(&x);
        for set in &sets {
            if let Some(p) = self.polish(&x, set).and_then(|p| self.rescale(&p)) {
                let better = match &best {
                    Some(b) => self.power(&p) < self.power(b),
                    None => true,
                };
                if better {
                    best = Some(p);
                }
            }
        }
        best
    }

    /// `lambda_min` is the smallest eigenvalue of `self.m`.
    fn solve(&self, lambda_min: f64, cfg: &OracleConfig) -> Result<(usize, usize, SVector<f64, N>)> {
        cfg.validate()?;
        if !(lambda_min > 0.0) {
            return Err(Error::InvalidParameter {
                name: "power_form",
                reason: format!("not positive definite (smallest eigenvalue {lambda_min:e})"),
            });
        }
        let scale = 1.0 / lambda_min.sqrt();
        let results: Vec<Option<SVector<f64, N>>> = (0..cfg.n_starts)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                let start = SVector::<f64, N>::from_fn(|_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                });
                self.local_solve(start, cfg)
            })
            .collect();
        let feasible = results.iter().filter(|r| r.is_some()).count();
        let mut best: Option<(usize, SVector<f64, N>)> = None;
        for (i, r) in results.into_iter().enumerate() {
            if let Some(x) = r {
                if best.as_ref().is_none_or(|(_, b)| self.power(&x) < self.power(b)) {
                    best = Some((i, x));
                }
            }
        }
        let (start, x) = best.ok_or(Error::OracleFailed { starts: cfg.n_starts })?;
        Ok((start, feasible, x))
    }
}

/// BFGS with Armijo backtracking; returns the last iterate.
fn bfgs<const N: usize, F>(f: F, start: SVector<f64, N>, tol: f64) -> SVector<f64, N>
where
    F: Fn(&SVector<f64, N>) -> (f64, SVector<f64, N>),
{
    let mut x = start;
    let (mut fx, mut g) = f(&x);
    let mut h = SMatrix::<f64, N, N>::identity();
    for _ in 0..BFGS_MAX_ITER {
        if g.norm() <= tol * (1.0 + fx.abs()) {
            break;
        }
        let mut d = -(h * g);
        let mut slope = d.dot(&g);
        if !(slope < 0.0) {
            h = SMatrix::identity();
            d = -g;
            slope = -g.norm_squared();
        }
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..80 {
            let xn = x + d * t;
            let (fn_, gn) = f(&xn);
            if fn_ <= fx + 1e-4 * t * slope {
                next = Some((xn, fn_, gn));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = next else { break };
        let s = xn - x;
        let yv = gn - g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let i = SMatrix::<f64, N, N>::identity();
            let left = i - s * yv.transpose() * rho;
            h = left * h * left.transpose() + s * s.transpose() * rho;
        }
        let done = fx - fn_ <= f64::EPSILON * fx.abs() && s.norm() <= f64::EPSILON * (1.0 + x.norm());
        x = xn;
        fx = fn_;
        g = gn;
        if done {
            break;
        }
    }
    x
}

fn lambda_min(rp: &ReducedProblem) -> f64 {
    rp.power_form.symmetric_eigenvalues().min()
}

fn real_problem(rp: &ReducedProblem) -> Qcqp<4> {
    Qcqp {
        m: rp.power_form,
        q: rp.constraint_forms,
    }
}

fn blockdiag(a: &SMatrix<f64, 4, 4>) -> SMatrix<f64, 8, 8> {
    let mut out = SMatrix::<f64, 8, 8>::zeros();
    out.fixed_view_mut::<4, 4>(0, 0).copy_from(a);
    out.fixed_view_mut::<4, 4>(4, 4).copy_from(a);
    out
}

fn complex_problem(rp: &ReducedProblem) -> Qcqp<8> {
    Qcqp {
        m: blockdiag(&rp.power_form),
        q: [blockdiag(&rp.constraint_forms[0]), blockdiag(&rp.constraint_forms[1])],
    }
}

/// Real reduced problem over `x` in R^4.
pub fn oracle_solve(rp: &ReducedProblem, cfg: &OracleConfig) -> Result<OracleSolution> {
    let (start, feasible_starts, x) = real_problem(rp).solve(lambda_min(rp), cfg)?;
    let x = ReducedPoint(x);
    Ok(OracleSolution {
        power_watts: rp.power_watts(&x),
        x,
        y: ReducedPoint::zeros(),
        start,
        feasible_starts,
    })
}

/// Complex reduced problem over `(x, y)` in R^8.
pub fn complex_oracle_solve(rp: &ReducedProblem, cfg: &OracleConfig) -> Result<OracleSolution> {
    let (start, feasible_starts, v) = complex_problem(rp).solve(lambda_min(rp), cfg)?;
    let x = ReducedPoint(Vector4::new(v[0], v[1], v[2], v[3]));
    let y = ReducedPoint(Vector4::new(v[4], v[5], v[6], v[7]));
    Ok(OracleSolution {
        power_watts: rp.params.sigma_r_sq * rp.reduced_power(&x, &y),
        x,
        y,
        start,
        feasible_starts,
    })
}
