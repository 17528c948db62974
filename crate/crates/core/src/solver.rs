//! Six-candidate algebraic solver.
//!
//! Two candidates keep both SINR constraints active; they are unconstrained
//! minima over the two free coordinates `(x2^(1), x2^(2))` of the both-active
//! surface, found by conjugate gradient. Four more keep a single constraint
//! active and come from a quadratic in `(x2^(i))^2`. The feasible candidate of
//! lowest power is the optimum.

use std::fmt;

use log::warn;
use nalgebra::{Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::cg::{self, CgOptions, CgResult};
use crate::error::{Error, Result};
use crate::model::{BeamformMatrix, ChannelPair, Node, SystemParams};
use crate::reduction::{ReducedPoint, ReducedProblem};

/// Candidates whose constraints are all `>= 1 - FEASIBILITY_TOL` are feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// `|f_i - 1|` below this marks constraint `i` active in the KKT check.
pub const ACTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    BothActivePlus,
    BothActiveMinus,
    Active1PosRoot,
    Active1NegRoot,
    Active2PosRoot,
    Active2NegRoot,
}

impl CandidateKind {
    pub const ALL: [CandidateKind; 6] = [
        CandidateKind::BothActivePlus,
        CandidateKind::BothActiveMinus,
        CandidateKind::Active1PosRoot,
        CandidateKind::Active1NegRoot,
        CandidateKind::Active2PosRoot,
        CandidateKind::Active2NegRoot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CandidateKind::BothActivePlus => "both_active_plus",
            CandidateKind::BothActiveMinus => "both_active_minus",
            CandidateKind::Active1PosRoot => "active1_pos_root",
            CandidateKind::Active1NegRoot => "active1_neg_root",
            CandidateKind::Active2PosRoot => "active2_pos_root",
            CandidateKind::Active2NegRoot => "active2_neg_root",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn single_active(node: Node, positive: bool) -> Self {
        match (node, positive) {
            (Node::One, true) => CandidateKind::Active1PosRoot,
            (Node::One, false) => CandidateKind::Active1NegRoot,
            (Node::Two, true) => CandidateKind::Active2PosRoot,
            (Node::Two, false) => CandidateKind::Active2NegRoot,
        }
    }
}

impl fmt::Display for CandidateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sign choice for the `x1^(2)` coordinate on the both-active surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Free coordinates of a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CandidateCoords {
    /// `(x2^(1), x2^(2))` on the both-active surface.
    Pair(f64, f64),
    /// `x2^(i)` for the single active constraint `i`.
    Scalar(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub kind: CandidateKind,
    pub coords: CandidateCoords,
    pub x: ReducedPoint,
    pub a: BeamformMatrix,
    pub power_watts: f64,
    /// Reduced constraint values `(f_1, f_2)`; feasible means both `>= 1`.
    pub f: [f64; 2],
    pub feasible: bool,
    pub iterations: usize,
}

impl Candidate {
    fn new(
        rp: &ReducedProblem,
        kind: CandidateKind,
        coords: CandidateCoords,
        x: ReducedPoint,
        iterations: usize,
    ) -> Self {
        let f = [
            rp.constraint_real(Node::One, &x),
            rp.constraint_real(Node::Two, &x),
        ];
        Candidate {
            kind,
            coords,
            a: rp.alpha_to_a(&x, &ReducedPoint::zeros()),
            power_watts: rp.power_watts(&x),
            feasible: f.iter().all(|&v| v >= 1.0 - FEASIBILITY_TOL),
            f,
            x,
            iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub best: Candidate,
    pub all_candidates: Vec<Candidate>,
    /// `|Mx - l1 Q1 x - l2 Q2 x| / |Mx|` at `best`.
    pub kkt_residual: f64,
    /// Nonnegative multipliers recovered for the KKT check.
    pub multipliers: [f64; 2],
    pub mrr_mrt: Candidate,
}

impl Solution {
    pub fn candidate(&self, kind: CandidateKind) -> Option<&Candidate> {
        self.all_candidates.iter().find(|c| c.kind == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveOptions {
    pub cg: CgOptions,
}

impl SolveOptions {
    /// 0.5 % relative-decrease termination.
    pub fn paper() -> Self {
        SolveOptions { cg: CgOptions::paper() }
    }

    pub fn tight() -> Self {
        SolveOptions { cg: CgOptions::tight() }
    }
}

/// `mu_k(x) = sqrt(a_k + b_k x^2)`.
pub fn mu(rp: &ReducedProblem, node: Node, x: f64) -> f64 {
    rp.mu(node, x)
}

/// Power on the both-active surface, `w^T Z w` with
/// `w = (mu_1(x), x, sign mu_2(y), y)`, and its exact gradient in `(x, y)`.
pub fn both_active_objective(rp: &ReducedProblem, x: f64, y: f64, sign: Sign) -> (f64, Vector2<f64>) {
    let s = sign.value();
    let mu1 = rp.mu(Node::One, x);
    let mu2 = rp.mu(Node::Two, y);
    let w = Vector4::new(mu1, x, s * mu2, y);
    let zw = rp.z * w;
    let value = w.dot(&zw);
    let dmu1 = rp.b[0] * x / mu1;
    let dmu2 = rp.b[1] * y / mu2;
    let grad = Vector2::new(
        2.0 * (zw[0] * dmu1 + zw[1]),
        2.0 * (zw[2] * s * dmu2 + zw[3]),
    );
    (value, grad)
}

/// Minimizes [`both_active_objective`] for one sign.
pub fn cg_minimize(rp: &ReducedProblem, sign: Sign, start: Vector2<f64>, opts: &CgOptions) -> Result<CgResult<2>> {
    cg::minimize(|v: &Vector2<f64>| both_active_objective(rp, v[0], v[1], sign), start, opts)
}

fn both_active_candidate(rp: &ReducedProblem, sign: Sign, opts: &CgOptions) -> Result<Candidate> {
    let res = cg_minimize(rp, sign, Vector2::zeros(), opts)?;
    let (x, y) = (res.point[0], res.point[1]);
    let kind = match sign {
        Sign::Plus => CandidateKind::BothActivePlus,
        Sign::Minus => CandidateKind::BothActiveMinus,
    };
    let point = rp.coords4_to_x(&rp.both_active_coords(x, y, sign.value()));
    Ok(Candidate::new(rp, kind, CandidateCoords::Pair(x, y), point, res.iterations))
}

/// The maximal-ratio receive / maximal-ratio transmit beamformer: the
/// both-active `+` point at `(x, y) = (0, 0)`.
pub fn mrr_mrt(rp: &ReducedProblem) -> Candidate {
    let point = rp.coords4_to_x(&rp.both_active_coords(0.0, 0.0, 1.0));
    Candidate::new(
        rp,
        CandidateKind::BothActivePlus,
        CandidateCoords::Pair(0.0, 0.0),
        point,
        0,
    )
}

/// Coefficients `(A, B, C)` of `A s^2 + B s + C = 0` in `s = (x2^(i))^2`
/// whose positive root gives the stationary point of the single-active
/// power, plus the leading block `(y11, y12, y22)` of `Y_i`.
pub fn single_active_quadratic(rp: &ReducedProblem, node: Node) -> ([f64; 3], (f64, f64, f64)) {
    let k = node.index();
    let y = &rp.y[k];
    let (y11, y12, y22) = (y[(0, 0)], y[(0, 1)], y[(1, 1)]);
    let (a, b) = (rp.a[k], rp.b[k]);
    let sum = y11 * b + y22;
    let lead = (sum * sum - 4.0 * y12 * y12 * b) * b;
    let mid = (sum * sum - 4.0 * y12 * y12 * b) * a;
    let constant = -y12 * y12 * a * a;
    ([lead, mid, constant], (y11, y12, y22))
}

/// Derivative of the single-active power along `x2^(i)`, divided by two:
/// `y11 b x + y12 mu(x) + y12 b x^2 / mu(x) + y22 x`.
pub fn single_active_stationarity(rp: &ReducedProblem, node: Node, x: f64) -> f64 {
    let (_, (y11, y12, y22)) = single_active_quadratic(rp, node);
    let b = rp.b[node.index()];
    let m = rp.mu(node, x);
    y11 * b * x + y12 * m + y12 * b * x * x / m + y22 * x
}

/// Nonnegative root of `A s^2 + B s + C` (one root is `>= 0`, the other
/// `< 0`, whenever `A > 0 >= C`).
fn nonnegative_root(coef: [f64; 3]) -> Option<f64> {
    let [a, b, c] = coef;
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return None;
    }
    if a.abs() < 1e-14 * scale {
        // degenerate quartic: linear in s
        log::debug!("degenerate single-active quartic, leading coefficient {a:e}");
        if b == 0.0 {
            return None;
        }
        let s = -c / b;
        return (s >= 0.0).then_some(s);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let q = -0.5 * (b + disc.sqrt().copysign(b));
    let roots = if q == 0.0 { [0.0, 0.0] } else { [q / a, c / q] };
    let positive = roots.iter().filter(|&&s| s >= 0.0).count();
    if positive != 1 && !(roots[0] == 0.0 && roots[1] == 0.0) {
        warn!("single-active quartic root structure unexpected: {roots:?}");
    }
    roots.into_iter().filter(|&s| s >= 0.0).reduce(f64::max)
}

/// The two single-active candidates for constraint `node`
/// (`x2^(i) = +sqrt(s)` and `-sqrt(s)`). Feasibility requires the other
/// constraint, evaluated directly, to be `>= 1`.
pub fn active_one_candidates(rp: &ReducedProblem, node: Node) -> Vec<Candidate> {
    let (coef, _) = single_active_quadratic(rp, node);
    let Some(s) = nonnegative_root(coef) else {
        warn!("no nonnegative root for single-active constraint {node}: {coef:?}");
        return Vec::new();
    };
    let u = &rp.u[node.index()];
    [true, false]
        .into_iter()
        .map(|positive| {
            let x2 = if positive { s.sqrt() } else { -s.sqrt() };
            let local = Vector4::new(rp.mu(node, x2), x2, 0.0, 0.0);
            let point = ReducedPoint(u * local);
            Candidate::new(
                rp,
                CandidateKind::single_active(node, positive),
                CandidateCoords::Scalar(x2),
                point,
                0,
            )
        })
        .collect()
}

/// Relative KKT residual `|Mx - l1 Q1 x - l2 Q2 x| / |Mx|` with multipliers
/// from nonnegative least squares over the active constraints.
pub fn kkt_residual(rp: &ReducedProblem, x: &ReducedPoint) -> (f64, [f64; 2]) {
    let mx = rp.power_form * x.0;
    let cols = [rp.constraint_forms[0] * x.0, rp.constraint_forms[1] * x.0];
    let active: Vec<usize> = (0..2)
        .filter(|&i| (rp.constraint_real(Node::BOTH[i], x) - 1.0).abs() < ACTIVE_TOL)
        .collect();
    let norm = mx.norm();
    if norm == 0.0 {
        return (0.0, [0.0; 2]);
    }
    let residual = |lam: &[f64; 2]| (mx - cols[0] * lam[0] - cols[1] * lam[1]).norm() / norm;

    let mut best = ([0.0; 2], residual(&[0.0; 2]));
    let mut consider = |lam: [f64; 2]| {
        if lam.iter().all(|&l| l >= 0.0) {
            let res = residual(&lam);
            if res < best.1 {
                best = (lam, res);
            }
        }
    };
    for &i in &active {
        let c = &cols[i];
        let denom = c.norm_squared();
        if denom > 0.0 {
            let mut lam = [0.0; 2];
            lam[i] = c.dot(&mx) / denom;
            consider(lam);
        }
    }
    if active.len() == 2 {
        let gram = Matrix2::new(
            cols[0].dot(&cols[0]),
            cols[0].dot(&cols[1]),
            cols[1].dot(&cols[0]),
            cols[1].dot(&cols[1]),
        );
        let rhs = Vector2::new(cols[0].dot(&mx), cols[1].dot(&mx));
        if let Some(sol) = gram.lu().solve(&rhs) {
            consider([sol[0], sol[1]]);
        }
    }
    (best.1, best.0)
}

fn pick_best(candidates: &[Candidate]) -> Option<&Candidate> {
    let min = candidates
        .iter()
        .filter(|c| c.feasible)
        .map(|c| c.power_watts)
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    // ties go to enumeration order, which starts with BothActivePlus
    candidates
        .iter()
        .filter(|c| c.feasible && c.power_watts <= min * (1.0 + 1e-12))
        .min_by_key(|c| c.kind)
}

/// Solves an already reduced problem.
pub fn solve_reduced(rp: &ReducedProblem, opts: &SolveOptions) -> Result<Solution> {
    let mut all = Vec::with_capacity(6);
    all.push(both_active_candidate(rp, Sign::Plus, &opts.cg)?);
    all.push(both_active_candidate(rp, Sign::Minus, &opts.cg)?);
    for node in Node::BOTH {
        all.extend(active_one_candidates(rp, node));
    }
    let best = pick_best(&all).ok_or(Error::NoFeasibleCandidate)?.clone();
    let (kkt, multipliers) = kkt_residual(rp, &best.x);
    Ok(Solution {
        best,
        all_candidates: all,
        kkt_residual: kkt,
        multipliers,
        mrr_mrt: mrr_mrt(rp),
    })
}

/// Minimum-power beamformer for a channel pair.
pub fn solve(ch: &ChannelPair, sp: &SystemParams, opts: &SolveOptions) -> Result<Solution> {
    let rp = ReducedProblem::build(ch, sp)?;
    solve_reduced(&rp, opts)
}
