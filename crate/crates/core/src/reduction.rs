//! Reduction of the complex `M x M` problem to a real four-dimensional one.
//!
//! The optimal relay matrix lies in the span of `conj(e_i) e_j^H` for an
//! orthonormal basis `{e+, e-}` of the two channel directions, so it is
//! described by a 2x2 coefficient matrix `alpha`. Vectorizing `alpha` row by
//! row as `[a11, a12, a21, a22]` turns the power and both constraints into
//! real quadratic forms `M`, `Q1`, `Q2`.

use nalgebra::{DVector, Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{BeamformMatrix, ChannelPair, Node, SystemParams};

/// Lower bound on `r = t-/t+` (and on `t+`) below which channels are treated
/// as collinear.
pub const TOL_R: f64 = 1e-8;

/// `|h2^H h1|` below this fraction of `|h1||h2|` is treated as zero and the
/// alignment phase is taken as 0.
pub const NO_PHASE_TOL: f64 = 1e-12;

/// Relative margin on `c_k rho - d_k` below which constraint `k` is rejected
/// as unsatisfiable.
pub const INFEASIBLE_TOL: f64 = 1e-12;

const ORTHOGONALITY_TOL: f64 = 1e-12;

/// Orthonormal basis of `span{h1, h2}` aligned with the channel phases.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBasis {
    /// Phase of `h2^H h1`.
    pub theta: f64,
    pub t_plus: f64,
    pub t_minus: f64,
    pub r: f64,
    pub e_plus: DVector<Complex64>,
    pub e_minus: DVector<Complex64>,
    pub norm_h1: f64,
    pub norm_h2: f64,
}

impl ChannelBasis {
    /// `(h1, h2)` rebuilt from the basis:
    /// `h1 = |h1| t+ (e+ + r e-)`, `h2 = e^{-j theta} |h2| t+ (e+ - r e-)`.
    pub fn reconstruct(&self) -> (DVector<Complex64>, DVector<Complex64>) {
        let sum = &self.e_plus + &self.e_minus * Complex64::from(self.r);
        let diff = &self.e_plus - &self.e_minus * Complex64::from(self.r);
        let h1 = sum * Complex64::from(self.norm_h1 * self.t_plus);
        let phase = Complex64::from_polar(1.0, -self.theta);
        let h2 = diff * (phase * self.norm_h2 * self.t_plus);
        (h1, h2)
    }
}

/// Builds the phase-aligned orthonormal basis `{e+, e-}` of the channel span.
pub fn build_basis(ch: &ChannelPair) -> Result<ChannelBasis> {
    let norm_h1 = ch.h1.norm();
    let norm_h2 = ch.h2.norm();
    if !(norm_h1 > 0.0 && norm_h2 > 0.0) {
        return Err(Error::InvalidParameter {
            name: "channels",
            reason: "channel norms must be nonzero".into(),
        });
    }
    let inner = ch.h2.dotc(&ch.h1);
    let theta = if inner.norm() < NO_PHASE_TOL * norm_h1 * norm_h2 {
        0.0
    } else {
        inner.arg()
    };
    let phase = Complex64::from_polar(1.0, theta);
    let u1 = &ch.h1 / Complex64::from(norm_h1);
    let u2 = &ch.h2 * (phase / norm_h2);
    let sum = &u1 + &u2;
    let diff = &u1 - &u2;
    let sum_norm = sum.norm();
    let diff_norm = diff.norm();
    let t_plus = sum_norm / 2.0;
    let t_minus = diff_norm / 2.0;
    let r = t_minus / t_plus;
    if !(t_plus >= TOL_R && r >= TOL_R) {
        return Err(Error::CollinearChannels { r, t_plus });
    }
    Ok(ChannelBasis {
        theta,
        t_plus,
        t_minus,
        r,
        e_plus: sum / Complex64::from(sum_norm),
        e_minus: diff / Complex64::from(diff_norm),
        norm_h1,
        norm_h2,
    })
}

/// A real point of the reduced problem: `alpha` vectorized row by row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedPoint(pub Vector4<f64>);

impl ReducedPoint {
    pub fn zeros() -> Self {
        ReducedPoint(Vector4::zeros())
    }

    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        ReducedPoint(Vector4::new(a11, a12, a21, a22))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vector4<f64>> for ReducedPoint {
    fn from(v: Vector4<f64>) -> Self {
        ReducedPoint(v)
    }
}

/// Every derived quantity of the reduced problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem {
    pub r: f64,
    /// `1 + r^2`
    pub rho: f64,
    /// `r^2 - 1`
    pub rho_prime: f64,
    pub q: [f64; 2],
    pub c: [f64; 2],
    pub d: [f64; 2],
    /// `tau_1 = (1, r)`, `tau_2 = (1, -r)`.
    pub tau: [Vector2<f64>; 2],
    /// `m = q1 tau_11 + q2 tau_22 + I`.
    pub m: Matrix2<f64>,
    /// Power form `M = diag(m, m)`.
    pub power_form: Matrix4<f64>,
    /// Constraint forms `Q_1`, `Q_2`.
    pub constraint_forms: [Matrix4<f64>; 2],
    /// Orthogonal `U_1`, `U_2` diagonalizing the constraint forms.
    pub u: [Matrix4<f64>; 2],
    /// Maps `(x1^(1), x2^(1), x1^(2), x2^(2))` to `x^(1) = U_1^T x`.
    pub p: Matrix4<f64>,
    /// `Z = P^T U_1^T M U_1 P`.
    pub z: Matrix4<f64>,
    /// `Y_k = U_k^T M U_k` for `k = 1, 2`.
    pub y: [Matrix4<f64>; 2],
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub basis: ChannelBasis,
    pub params: SystemParams,
}

/// `U_1` or `U_2` for a given `r`.
pub fn orthogonal_u(node: Node, r: f64) -> Matrix4<f64> {
    let r2 = r * r;
    let rho = 1.0 + r2;
    #[rustfmt::skip]
    let u = match node {
        Node::One => Matrix4::new(
            1.0, r, r, r2,
            -r, 1.0, r2, -r,
            r, r2, -1.0, -r,
            -r2, r, -r, 1.0,
        ),
        Node::Two => Matrix4::new(
            1.0, r, r, r2,
            r, -1.0, -r2, r,
            -r, -r2, 1.0, r,
            -r2, r, -r, 1.0,
        ),
    };
    u / rho
}

/// Solves the compatibility condition `U_1 x^(1) = U_2 x^(2)` for the trailing
/// components and returns `P`, which maps the four leading components
/// `(x1^(1), x2^(1), x1^(2), x2^(2))` to `x^(1)`.
pub fn compatibility_map(r: f64) -> Result<Matrix4<f64>> {
    let u1 = orthogonal_u(Node::One, r);
    let u2 = orthogonal_u(Node::Two, r);
    let col = |u: &Matrix4<f64>, j: usize| u.column(j).into_owned();
    let lhs = Matrix4::from_columns(&[col(&u1, 2), col(&u1, 3), -col(&u2, 2), -col(&u2, 3)]);
    let rhs = Matrix4::from_columns(&[-col(&u1, 0), -col(&u1, 1), col(&u2, 0), col(&u2, 1)]);
    let solved = lhs
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or(Error::CollinearChannels { r, t_plus: f64::NAN })?;
    let mut p = Matrix4::zeros();
    p[(0, 0)] = 1.0;
    p[(1, 1)] = 1.0;
    p.fixed_view_mut::<2, 4>(2, 0).copy_from(&solved.fixed_view::<2, 4>(0, 0));
    Ok(p)
}

fn kron2(a: &Matrix2<f64>, b: &Matrix2<f64>) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| a[(i / 2, j / 2)] * b[(i % 2, j % 2)])
}

fn taus(r: f64) -> [Vector2<f64>; 2] {
    [Vector2::new(1.0, r), Vector2::new(1.0, -r)]
}

/// Power form `M = diag(m, m)` with `m = q1 tau_1 tau_1^T + q2 tau_2 tau_2^T + I`.
pub fn power_form(r: f64, q1: f64, q2: f64) -> Matrix4<f64> {
    let [t1, t2] = taus(r);
    let m = t1 * t1.transpose() * q1 + t2 * t2.transpose() * q2 + Matrix2::identity();
    kron2(&Matrix2::identity(), &m)
}

/// `Z = P^T U_1^T M U_1 P` assembled numerically.
pub fn z_matrix(r: f64, q1: f64, q2: f64) -> Result<Matrix4<f64>> {
    let p = compatibility_map(r)?;
    let u1 = orthogonal_u(Node::One, r);
    let up = u1 * p;
    Ok(up.transpose() * power_form(r, q1, q2) * up)
}

/// Hard-coded closed form of `Z` (cross-check for [`z_matrix`]).
pub fn closed_form_z(r: f64, q1: f64, q2: f64) -> Matrix4<f64> {
    let rho = r * r + 1.0;
    let rp = r * r - 1.0;
    let rp2 = rp * rp;
    let z11 = rho * (rp2 * q1 + rho * rho * q2 + rho);
    let z12 = -2.0 * r * rho * rp * q1;
    let z13 = -rp2 * (rho * (q1 + q2) + 1.0);
    let z14 = 2.0 * r * rp * (rho * q2 + 1.0);
    let z22 = rho * (4.0 * r * r * q1 + rho);
    let z23 = 2.0 * r * rp * (rho * q1 + 1.0);
    let z24 = rp2;
    let z33 = rho * (rho * rho * q1 + rp2 * q2 + rho);
    let z34 = -2.0 * r * rho * rp * q2;
    let z44 = rho * (4.0 * r * r * q2 + rho);
    #[rustfmt::skip]
    let z = Matrix4::new(
        z11, z12, z13, z14,
        z12, z22, z23, z24,
        z13, z23, z33, z34,
        z14, z24, z34, z44,
    );
    z / (4.0 * r * r)
}

/// Hard-coded closed form of `U_1 P` (the map from the four leading
/// coordinates to the vectorized `alpha`).
pub fn closed_form_reconstruction(r: f64) -> Matrix4<f64> {
    #[rustfmt::skip]
    let m = Matrix4::new(
        1.0, r, 1.0, r,
        -r, 1.0, r, -1.0,
        1.0 / r, 1.0, -1.0 / r, -1.0,
        -1.0, 1.0 / r, -1.0, 1.0 / r,
    );
    m * 0.5
}

/// Closed form of the leading 2x2 block `(y11, y12, y22)` of `Y_k`.
///
/// For `k = 2` the roles of `q1` and `q2` swap.
pub fn closed_form_y_block(node: Node, r: f64, q1: f64, q2: f64) -> (f64, f64, f64) {
    let rho = 1.0 + r * r;
    let rp = r * r - 1.0;
    let (q_self, q_other) = match node {
        Node::One => (q1, q2),
        Node::Two => (q2, q1),
    };
    let y11 = (q_self * rp * rp + q_other * rho * rho + rho) / rho;
    let y12 = -2.0 * q_self * r * rp / rho;
    let y22 = (4.0 * q_self * r * r + rho) / rho;
    (y11, y12, y22)
}

fn orthogonality_error(u: &Matrix4<f64>) -> f64 {
    (u.transpose() * u - Matrix4::identity()).abs().max()
}

impl ReducedProblem {
    /// Builds the reduced problem for a channel pair and system parameters.
    pub fn build(ch: &ChannelPair, sp: &SystemParams) -> Result<Self> {
        sp.validate()?;
        if ch.len() != sp.num_antennas {
            return Err(Error::DimensionMismatch {
                expected: sp.num_antennas,
                got: ch.len(),
            });
        }
        let basis = build_basis(ch)?;
        let r = basis.r;
        let tp2 = basis.t_plus * basis.t_plus;
        let n1 = basis.norm_h1 * basis.norm_h1;
        let n2 = basis.norm_h2 * basis.norm_h2;
        let norms = [n1, n2];

        let mut q = [0.0; 2];
        let mut c = [0.0; 2];
        let mut d = [0.0; 2];
        for node in Node::BOTH {
            let i = node.index();
            let k = node.other();
            q[i] = sp.power(node) * norms[i] * tp2 / sp.sigma_r_sq;
            c[i] = sp.power(k) * n1 * n2 * tp2 * tp2 / (sp.constraint_threshold(node));
            d[i] = norms[i] * tp2 * sp.sigma_r_sq / sp.noise_sq(node);
        }

        let rho = 1.0 + r * r;
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        for node in Node::BOTH {
            let i = node.index();
            let margin = c[i] * rho - d[i];
            if margin <= INFEASIBLE_TOL * c[i] * rho {
                return Err(Error::InfeasibleConstraint(node));
            }
            a[i] = 1.0 / (rho * margin);
            b[i] = d[i] / margin;
        }

        let tau = taus(r);
        let m = tau[0] * tau[0].transpose() * q[0]
            + tau[1] * tau[1].transpose() * q[1]
            + Matrix2::identity();
        let power_form = kron2(&Matrix2::identity(), &m);
        let outer = |t: &Vector2<f64>| t * t.transpose();
        let constraint_forms = [Node::One, Node::Two].map(|node| {
            let i = node.index();
            let k = node.other().index();
            kron2(&outer(&tau[i]), &outer(&tau[k])) * c[i]
                - kron2(&outer(&tau[i]), &Matrix2::identity()) * d[i]
        });

        let u = [orthogonal_u(Node::One, r), orthogonal_u(Node::Two, r)];
        for uk in &u {
            let err = orthogonality_error(uk);
            if err > ORTHOGONALITY_TOL {
                return Err(Error::InvalidParameter {
                    name: "r",
                    reason: format!("U is not orthogonal to 1e-12 (error {err:.3e}) at r = {r}"),
                });
            }
        }
        let p = compatibility_map(r)?;
        let y = [
            u[0].transpose() * power_form * u[0],
            u[1].transpose() * power_form * u[1],
        ];
        let z = p.transpose() * y[0] * p;

        if power_form.cholesky().is_none() || y.iter().any(|yk| yk.cholesky().is_none()) {
            return Err(Error::InvalidParameter {
                name: "power_form",
                reason: "power form is not positive definite".into(),
            });
        }

        Ok(ReducedProblem {
            r,
            rho,
            rho_prime: r * r - 1.0,
            q,
            c,
            d,
            tau,
            m,
            power_form,
            constraint_forms,
            u,
            p,
            z,
            y,
            a,
            b,
            basis,
            params: *sp,
        })
    }

    /// `mu_k(x) = sqrt(a_k + b_k x^2)`.
    pub fn mu(&self, node: Node, x: f64) -> f64 {
        let k = node.index();
        let radicand = self.a[k] + self.b[k] * x * x;
        assert!(radicand >= 0.0, "mu radicand negative: {radicand}");
        radicand.sqrt()
    }

    pub fn constraint_form(&self, node: Node) -> &Matrix4<f64> {
        &self.constraint_forms[node.index()]
    }

    /// Dimensionless power `g(x, y) = x^T M x + y^T M y`; watts are
    /// `sigma_R^2 g`.
    pub fn reduced_power(&self, x: &ReducedPoint, y: &ReducedPoint) -> f64 {
        x.0.dot(&(self.power_form * x.0)) + y.0.dot(&(self.power_form * y.0))
    }

    /// Relay power in watts of a real reduced point.
    pub fn power_watts(&self, x: &ReducedPoint) -> f64 {
        self.params.sigma_r_sq * self.reduced_power(x, &ReducedPoint::zeros())
    }

    /// `f_i(x, y) = x^T Q_i x + y^T Q_i y`; feasible iff `>= 1`.
    pub fn reduced_constraint(&self, node: Node, x: &ReducedPoint, y: &ReducedPoint) -> f64 {
        let q = self.constraint_form(node);
        x.0.dot(&(q * x.0)) + y.0.dot(&(q * y.0))
    }

    /// Real-point shorthand for [`Self::reduced_constraint`].
    pub fn constraint_real(&self, node: Node, x: &ReducedPoint) -> f64 {
        let q = self.constraint_form(node);
        x.0.dot(&(q * x.0))
    }

    /// Diagonalized evaluation `rho ((c_k rho - d_k) x1^2 - d_k x2^2)` with
    /// `x^(k) = U_k^T x`.
    pub fn constraint_diagonal(&self, node: Node, x: &ReducedPoint) -> f64 {
        let k = node.index();
        let xk = self.u[k].transpose() * x.0;
        self.rho * ((self.c[k] * self.rho - self.d[k]) * xk[0] * xk[0] - self.d[k] * xk[1] * xk[1])
    }

    /// Full relay matrix `A = [conj(e+) conj(e-)] alpha [e+^H; e-^H]` with
    /// `alpha = x + j y` (row-major).
    pub fn alpha_to_a(&self, x: &ReducedPoint, y: &ReducedPoint) -> BeamformMatrix {
        let e = [&self.basis.e_plus, &self.basis.e_minus];
        let m = e[0].len();
        let mut a = nalgebra::DMatrix::<Complex64>::zeros(m, m);
        for i in 0..2 {
            for j in 0..2 {
                let coef = Complex64::new(x.0[2 * i + j], y.0[2 * i + j]);
                if coef == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let left = e[i].map(|z| z.conj());
                a += left * e[j].adjoint() * coef;
            }
        }
        BeamformMatrix(a)
    }

    /// Maps leading coordinates `v = (x1^(1), x2^(1), x1^(2), x2^(2))` to the
    /// reduced point `x = U_1 P v`.
    pub fn coords4_to_x(&self, v: &Vector4<f64>) -> ReducedPoint {
        ReducedPoint(self.u[0] * (self.p * v))
    }

    /// Leading coordinates on the both-active surface:
    /// `(mu_1(x), x, sign * mu_2(y), y)`.
    pub fn both_active_coords(&self, x: f64, y: f64, sign: f64) -> Vector4<f64> {
        Vector4::new(self.mu(Node::One, x), x, sign * self.mu(Node::Two, y), y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{constraint_value, relay_power};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Orthogonal channels of norm sqrt(2): r = 1, q = 10, c = d = 1.
    fn orthogonal_instance() -> (ChannelPair, SystemParams) {
        let s = 2f64.sqrt();
        let ch = ChannelPair::from_slices(&[c(s, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(s, 0.0)]).unwrap();
        (ch, SystemParams::symmetric(2, 10.0, 1.0, 1.0, 10.0))
    }

    fn random_channels(rng: &mut ChaCha8Rng, m: usize) -> ChannelPair {
        let mut v = || -> Vec<Complex64> {
            (0..m).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
        };
        let h1 = v();
        let h2 = v();
        ChannelPair::from_slices(&h1, &h2).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng) -> ReducedPoint {
        ReducedPoint(Vector4::from_fn(|_, _| rng.random_range(-2.0..2.0)))
    }

    fn feasible_random(seed: u64) -> ReducedProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let ch = random_channels(&mut rng, 4);
            let sp = SystemParams::symmetric(4, 10.0, 1.0, 1.0, 2.0);
            if let Ok(rp) = ReducedProblem::build(&ch, &sp) {
                return rp;
            }
        }
    }

    #[test]
    fn basis_of_orthogonal_unit_channels() {
        let ch = ChannelPair::from_slices(&[c(1.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let b = build_basis(&ch).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(b.theta, 0.0);
        assert!((b.t_plus - h).abs() < 1e-15);
        assert!((b.t_minus - h).abs() < 1e-15);
        assert!((b.r - 1.0).abs() < 1e-15);
        for (got, want) in b.e_plus.iter().zip([h, h]) {
            assert!((got - c(want, 0.0)).norm() < 1e-15);
        }
        for (got, want) in b.e_minus.iter().zip([h, -h]) {
            assert!((got - c(want, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn aligned_channels_are_collinear() {
        let h1 = [c(1.0, 0.5), c(-0.3, 2.0), c(0.7, 0.1)];
        let h2: Vec<_> = h1.iter().map(|z| z * c(0.0, 1.0)).collect();
        let ch = ChannelPair::from_slices(&h1, &h2).unwrap();
        assert!(matches!(build_basis(&ch), Err(Error::CollinearChannels { .. })));
    }

    #[test]
    fn basis_invariants_on_random_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let ch = random_channels(&mut rng, 4);
            let b = build_basis(&ch).unwrap();
            assert!((b.e_plus.norm() - 1.0).abs() < 1e-12);
            assert!((b.e_minus.norm() - 1.0).abs() < 1e-12);
            assert!(b.e_plus.dotc(&b.e_minus).norm() < 1e-12);
            let (h1, h2) = b.reconstruct();
            assert!((h1 - &ch.h1).norm() <= 1e-10 * ch.h1.norm());
            assert!((h2 - &ch.h2).norm() <= 1e-10 * ch.h2.norm());
            assert!(b.r > 0.0 && b.r <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn constants_of_orthogonal_instance() {
        let (ch, sp) = orthogonal_instance();
        let rp = ReducedProblem::build(&ch, &sp).unwrap();
        assert!((rp.r - 1.0).abs() < 1e-14);
        assert!((rp.rho - 2.0).abs() < 1e-14);
        assert!(rp.rho_prime.abs() < 1e-14);
        for k in 0..2 {
            assert!((rp.q[k] - 10.0).abs() < 1e-12);
            assert!((rp.c[k] - 1.0).abs() < 1e-12);
            assert!((rp.d[k] - 1.0).abs() < 1e-12);
            assert!((rp.a[k] - 0.5).abs() < 1e-12);
            assert!((rp.b[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_norm_orthogonal_channels_are_infeasible() {
        // max SINR = p |h_k|^2 / sigma_R^2 = 10 = gamma: not attainable.
        let ch = ChannelPair::from_slices(&[c(1.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let sp = SystemParams::symmetric(2, 10.0, 1.0, 1.0, 10.0);
        assert_eq!(
            ReducedProblem::build(&ch, &sp).unwrap_err(),
            Error::InfeasibleConstraint(Node::One)
        );
    }

    #[test]
    fn huge_gamma_is_infeasible() {
        let (ch, sp) = orthogonal_instance();
        let sp = SystemParams { gamma1: 1e9, ..sp };
        assert_eq!(
            ReducedProblem::build(&ch, &sp).unwrap_err(),
            Error::InfeasibleConstraint(Node::One)
        );
        let sp = SystemParams { gamma1: 10.0, gamma2: 1e9, ..sp };
        assert_eq!(
            ReducedProblem::build(&ch, &sp).unwrap_err(),
            Error::InfeasibleConstraint(Node::Two)
        );
    }

    #[test]
    fn u_matrices_orthogonal_over_r_range() {
        for r in [0.01, 0.5, 1.0, 2.0, 100.0] {
            for node in Node::BOTH {
                assert!(orthogonality_error(&orthogonal_u(node, r)) <= 1e-12, "r = {r}");
            }
        }
    }

    #[test]
    fn compatibility_system_invertible_over_r_range() {
        let mut r = 2.0 * TOL_R;
        while r < 0.5 / TOL_R {
            let u1 = orthogonal_u(Node::One, r);
            let u2 = orthogonal_u(Node::Two, r);
            let col = |u: &Matrix4<f64>, j: usize| u.column(j).into_owned();
            let lhs = Matrix4::from_columns(&[col(&u1, 2), col(&u1, 3), -col(&u2, 2), -col(&u2, 3)]);
            assert!(lhs.determinant().abs() > 0.0, "singular at r = {r}");
            assert!(compatibility_map(r).is_ok());
            r *= 3.7;
        }
    }

    #[test]
    fn z_and_reconstruction_match_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r: f64 = 10f64.powf(rng.random_range(-1.0..1.0));
            let q1 = 10f64.powf(rng.random_range(-1.0..2.0));
            let q2 = 10f64.powf(rng.random_range(-1.0..2.0));
            let z = z_matrix(r, q1, q2).unwrap();
            let zc = closed_form_z(r, q1, q2);
            assert!((z - zc).abs().max() <= 1e-10 * zc.abs().max());
            let up = orthogonal_u(Node::One, r) * compatibility_map(r).unwrap();
            let uc = closed_form_reconstruction(r);
            assert!((up - uc).abs().max() <= 1e-10 * uc.abs().max());
        }
    }

    #[test]
    fn y_blocks_match_closed_form_and_decouple() {
        for seed in 0..20 {
            let rp = feasible_random(seed);
            for node in Node::BOTH {
                let y = &rp.y[node.index()];
                let (y11, y12, y22) = closed_form_y_block(node, rp.r, rp.q[0], rp.q[1]);
                let scale = y.abs().max();
                assert!((y[(0, 0)] - y11).abs() <= 1e-12 * scale);
                assert!((y[(0, 1)] - y12).abs() <= 1e-12 * scale);
                assert!((y[(1, 1)] - y22).abs() <= 1e-12 * scale);
                // The (1,2)/(3,4) coordinate blocks do not couple.
                assert!(y.fixed_view::<2, 2>(0, 2).abs().max() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn diagonalized_constraints() {
        for seed in 0..20 {
            let rp = feasible_random(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..20 {
                let x = random_point(&mut rng);
                for node in Node::BOTH {
                    let direct = rp.constraint_real(node, &x);
                    let diag = rp.constraint_diagonal(node, &x);
                    let scale = rp.constraint_form(node).abs().max() * x.0.norm_squared();
                    assert!((direct - diag).abs() <= 1e-10 * scale.max(1.0));
                }
            }
        }
    }

    #[test]
    fn reduced_power_examples() {
        let rp = feasible_random(1);
        let zero = ReducedPoint::zeros();
        assert_eq!(rp.reduced_power(&zero, &zero), 0.0);
        assert_eq!(rp.reduced_constraint(Node::One, &zero, &zero), 0.0);
        let e1 = ReducedPoint::new(1.0, 0.0, 0.0, 0.0);
        let g = rp.reduced_power(&e1, &zero);
        assert!((g - (rp.q[0] + rp.q[1] + 1.0)).abs() < 1e-12 * g);
    }

    #[test]
    fn alpha_to_a_examples() {
        let rp = feasible_random(2);
        let zero = ReducedPoint::zeros();
        let a = rp.alpha_to_a(&zero, &zero);
        assert!(a.0.iter().all(|z| *z == c(0.0, 0.0)));
        let e1 = ReducedPoint::new(1.0, 0.0, 0.0, 0.0);
        let a = rp.alpha_to_a(&e1, &zero);
        let want = rp.basis.e_plus.map(|z| z.conj()) * rp.basis.e_plus.adjoint();
        assert!((a.0 - want).norm() < 1e-14);
    }

    #[test]
    fn cross_module_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut checked = 0;
        while checked < 50 {
            let ch = random_channels(&mut rng, 4);
            let sp = SystemParams::symmetric(4, 10.0, 1.3, 1.7, 3.0);
            let Ok(rp) = ReducedProblem::build(&ch, &sp) else { continue };
            let x = random_point(&mut rng);
            let y = random_point(&mut rng);
            let a = rp.alpha_to_a(&x, &y);
            assert!(a.rank(1e-10) <= 2);
            let g = relay_power(&a, &ch, &sp).unwrap();
            let g_red = sp.sigma_r_sq * rp.reduced_power(&x, &y);
            assert!((g - g_red).abs() <= 1e-9 * g);
            for node in Node::BOTH {
                let f = constraint_value(node, &a, &ch, &sp).unwrap() / sp.constraint_threshold(node);
                let f_red = rp.reduced_constraint(node, &x, &y);
                let scale = (rp.constraint_form(node).abs().max()) * (x.0.norm_squared() + y.0.norm_squared());
                assert!((f - f_red).abs() <= 1e-9 * scale, "{f} vs {f_red}");
            }
            checked += 1;
        }
    }

    #[test]
    fn coords4_to_x_matches_leading_coordinates() {
        let rp = feasible_random(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let v = Vector4::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let x = rp.coords4_to_x(&v);
            let x1 = rp.u[0].transpose() * x.0;
            let x2 = rp.u[1].transpose() * x.0;
            let tol = 1e-10 * (1.0 + v.norm());
            assert!((x1[0] - v[0]).abs() < tol && (x1[1] - v[1]).abs() < tol);
            assert!((x2[0] - v[2]).abs() < tol && (x2[1] - v[3]).abs() < tol);
            let g = rp.reduced_power(&x, &ReducedPoint::zeros());
            assert!((g - v.dot(&(rp.z * v))).abs() <= 1e-10 * g);
            let closed = closed_form_reconstruction(rp.r) * v;
            assert!((closed - x.0).norm() <= 1e-10 * x.0.norm());
        }
    }

    #[test]
    fn coords4_to_x_at_unit_r() {
        // r = 1 via the orthogonal instance.
        let (ch, sp) = orthogonal_instance();
        let rp = ReducedProblem::build(&ch, &sp).unwrap();
        let x = rp.coords4_to_x(&Vector4::new(1.0, 0.0, 1.0, 0.0));
        assert!((x.0 - Vector4::new(1.0, 0.0, 0.0, -1.0)).norm() < 1e-12);
        let x = rp.coords4_to_x(&Vector4::new(1.0, 0.0, -1.0, 0.0));
        assert!((x.0 - Vector4::new(0.0, -1.0, 1.0, 0.0)).norm() < 1e-12);
    }
}
