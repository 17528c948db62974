//! Self-consistency checks over random protocol instances.

use std::fmt;

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{constraint_value, relay_power, Node};
use crate::oracle::{oracle_solve, OracleConfig};
use crate::reduction::{closed_form_z, orthogonal_u, z_matrix, ReducedPoint};
use crate::sim::{gap_db, protocol_instance, SweepConfig};
use crate::solver::{solve_reduced, SolveOptions, FEASIBILITY_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub instances: usize,
    pub seed: u64,
    pub oracle_starts: usize,
    /// Perturbs the closed-form Z used by the `z_closed_form` check.
    #[serde(skip)]
    pub corrupt_z: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            instances: 100,
            seed: 0,
            oracle_starts: 16,
            corrupt_z: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.samples > 0 && self.worst <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} worst {:.3e} (tol {:.0e}, n = {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.samples
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    /// Draws skipped as collinear or infeasible.
    pub skipped: usize,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

struct Worst {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    samples: usize,
}

impl Worst {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Worst { name, tolerance, worst: 0.0, samples: 0 }
    }

    fn add(&mut self, v: f64) {
        self.samples += 1;
        if v.is_nan() || v > self.worst {
            self.worst = if v.is_nan() { f64::INFINITY } else { v };
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            worst: self.worst,
            tolerance: self.tolerance,
            samples: self.samples,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.instances == 0 {
        return Err(Error::InvalidParameter {
            name: "instances",
            reason: "must be at least 1".into(),
        });
    }
    let sweep = SweepConfig { seed: cfg.seed, ..Default::default() };
    let mut equivalence = Worst::new("reduction_equivalence", 1e-9);
    let mut ortho = Worst::new("basis_orthogonality", 1e-12);
    let mut zcheck = Worst::new("z_closed_form", 1e-10);
    let mut feas = Worst::new("solver_feasibility", FEASIBILITY_TOL);
    let mut kkt = Worst::new("solver_kkt", 1e-6);
    let mut agree = Worst::new("solver_vs_oracle_db", 0.01);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut skipped = 0;
    let mut index = 0;
    let mut done = 0;
    while done < cfg.instances {
        let draw = protocol_instance(&sweep, index);
        index += 1;
        let (ch, sp, rp) = match draw {
            Ok(v) => v,
            Err(e) if e.is_problem_degenerate() => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        done += 1;

        let x = ReducedPoint::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let y = ReducedPoint::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let a = rp.alpha_to_a(&x, &y);
        let g = sp.sigma_r_sq * rp.reduced_power(&x, &y);
        equivalence.add(rel(g, relay_power(&a, &ch, &sp)?));
        for node in Node::BOTH {
            let direct = constraint_value(node, &a, &ch, &sp)? / sp.constraint_threshold(node);
            let reduced = rp.reduced_constraint(node, &x, &y);
            equivalence.add((direct - reduced).abs() / direct.abs().max(1.0));
        }

        let r: f64 = rng.random_range(0.01..1.0);
        let (q1, q2): (f64, f64) = (rng.random_range(0.1..100.0), rng.random_range(0.1..100.0));
        for node in Node::BOTH {
            let u = orthogonal_u(node, r);
            ortho.add((u.transpose() * u - Matrix4::identity()).amax());
        }
        let mut closed = closed_form_z(r, q1, q2);
        if cfg.corrupt_z {
            closed[(1, 1)] *= 1.0 + 1e-3;
        }
        let numeric = z_matrix(r, q1, q2)?;
        zcheck.add((numeric - closed).amax() / numeric.amax());

        let sol = solve_reduced(&rp, &SolveOptions::tight())?;
        feas.add((1.0 - sol.best.f[0].min(sol.best.f[1])).max(0.0));
        kkt.add(sol.kkt_residual);
        let oracle_cfg = OracleConfig {
            n_starts: cfg.oracle_starts,
            ..OracleConfig::with_seed(rng.random())
        };
        let oracle = oracle_solve(&rp, &oracle_cfg)?;
        agree.add(gap_db(sol.best.power_watts, oracle.power_watts).abs());
    }
    Ok(VerifyReport {
        checks: vec![
            equivalence.finish(),
            ortho.finish(),
            zcheck.finish(),
            feas.finish(),
            kkt.finish(),
            agree.finish(),
        ],
        skipped,
    })
}
