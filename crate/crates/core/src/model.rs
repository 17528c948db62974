//! Physical-domain problem: channels, system parameters, relay transmit power
//! and the SINR constraint functionals on full `M x M` beamforming matrices.
//!
//! Powers are in watts, SINR values are linear. The constraint functional uses
//! the plain transpose `h_i^T` (no conjugation) on the left of `A`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the two terminal nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Node {
    One,
    Two,
}

impl Node {
    pub const BOTH: [Node; 2] = [Node::One, Node::Two];

    /// The partner node `k = 3 - i`.
    pub fn other(self) -> Node {
        match self {
            Node::One => Node::Two,
            Node::Two => Node::One,
        }
    }

    /// Zero-based index (0 for node 1, 1 for node 2).
    pub fn index(self) -> usize {
        match self {
            Node::One => 0,
            Node::Two => 1,
        }
    }

    pub fn from_number(i: usize) -> Option<Node> {
        match i {
            1 => Some(Node::One),
            2 => Some(Node::Two),
            _ => None,
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

/// Transmit powers, noise variances and SINR targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub num_antennas: usize,
    pub p1: f64,
    pub p2: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma_r_sq: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl SystemParams {
    /// Symmetric parameters: both nodes share power, noise variance and target.
    pub fn symmetric(num_antennas: usize, p: f64, sigma_sq: f64, sigma_r_sq: f64, gamma: f64) -> Self {
        SystemParams {
            num_antennas,
            p1: p,
            p2: p,
            sigma1_sq: sigma_sq,
            sigma2_sq: sigma_sq,
            sigma_r_sq,
            gamma1: gamma,
            gamma2: gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_antennas < 2 {
            return Err(Error::InvalidParameter {
                name: "num_antennas",
                reason: format!("need at least 2 antennas, got {}", self.num_antennas),
            });
        }
        let scalars = [
            ("p1", self.p1),
            ("p2", self.p2),
            ("sigma1_sq", self.sigma1_sq),
            ("sigma2_sq", self.sigma2_sq),
            ("sigma_r_sq", self.sigma_r_sq),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn power(&self, node: Node) -> f64 {
        match node {
            Node::One => self.p1,
            Node::Two => self.p2,
        }
    }

    pub fn noise_sq(&self, node: Node) -> f64 {
        match node {
            Node::One => self.sigma1_sq,
            Node::Two => self.sigma2_sq,
        }
    }

    pub fn gamma(&self, node: Node) -> f64 {
        match node {
            Node::One => self.gamma1,
            Node::Two => self.gamma2,
        }
    }

    /// Right-hand side `gamma_i * sigma_i^2` of the constraint `f_i(A) >= ...`.
    pub fn constraint_threshold(&self, node: Node) -> f64 {
        self.gamma(node) * self.noise_sq(node)
    }

    /// Multiply every power and noise variance by `kappa`.
    pub fn scaled(&self, kappa: f64) -> Self {
        SystemParams {
            p1: self.p1 * kappa,
            p2: self.p2 * kappa,
            sigma1_sq: self.sigma1_sq * kappa,
            sigma2_sq: self.sigma2_sq * kappa,
            sigma_r_sq: self.sigma_r_sq * kappa,
            ..*self
        }
    }
}

/// Channel gains from each terminal to the relay.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPair {
    pub h1: DVector<Complex64>,
    pub h2: DVector<Complex64>,
}

impl ChannelPair {
    pub fn new(h1: DVector<Complex64>, h2: DVector<Complex64>) -> Result<Self> {
        if h1.len() != h2.len() {
            return Err(Error::DimensionMismatch {
                expected: h1.len(),
                got: h2.len(),
            });
        }
        if h1.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "channels",
                reason: format!("need length >= 2, got {}", h1.len()),
            });
        }
        for (name, h) in [("h1", &h1), ("h2", &h2)] {
            let n = h.norm();
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("channel norm must be finite and nonzero, got {n}"),
                });
            }
        }
        Ok(ChannelPair { h1, h2 })
    }

    pub fn from_slices(h1: &[Complex64], h2: &[Complex64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(h1), DVector::from_column_slice(h2))
    }

    pub fn len(&self) -> usize {
        self.h1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h1.is_empty()
    }

    pub fn channel(&self, node: Node) -> &DVector<Complex64> {
        match node {
            Node::One => &self.h1,
            Node::Two => &self.h2,
        }
    }

    fn check_dims(&self, a: &BeamformMatrix, sp: &SystemParams) -> Result<()> {
        let m = self.len();
        if a.dim() != m {
            return Err(Error::DimensionMismatch { expected: m, got: a.dim() });
        }
        if sp.num_antennas != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: sp.num_antennas,
            });
        }
        Ok(())
    }
}

/// The relay's `M x M` complex beamforming matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformMatrix(pub DMatrix<Complex64>);

impl BeamformMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        Ok(BeamformMatrix(entries))
    }

    pub fn zeros(m: usize) -> Self {
        BeamformMatrix(DMatrix::zeros(m, m))
    }

    pub fn identity(m: usize) -> Self {
        BeamformMatrix(DMatrix::identity(m, m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        BeamformMatrix(self.0.map(|z| z * c))
    }

    /// Numerical rank from the singular values (relative threshold `rel_tol`).
    pub fn rank(&self, rel_tol: f64) -> usize {
        let sv = self.0.clone().singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s > rel_tol * max).count()
    }
}

/// Relay transmit power
/// `G(A) = |A h1|^2 p1 + |A h2|^2 p2 + Tr[A^H A] sigma_R^2`, in watts.
pub fn relay_power(a: &BeamformMatrix, ch: &ChannelPair, sp: &SystemParams) -> Result<f64> {
    ch.check_dims(a, sp)?;
    let a = &a.0;
    let g = (a * &ch.h1).norm_squared() * sp.p1
        + (a * &ch.h2).norm_squared() * sp.p2
        + a.norm_squared() * sp.sigma_r_sq;
    Ok(g)
}

/// Signal and noise parts of the received signal at `node`:
/// `(|h_i^T A h_k|^2 p_k, |h_i^T A|^2 sigma_R^2)`.
fn signal_and_relay_noise(
    node: Node,
    a: &BeamformMatrix,
    ch: &ChannelPair,
    sp: &SystemParams,
) -> Result<(f64, f64)> {
    ch.check_dims(a, sp)?;
    let hi = ch.channel(node);
    let hk = ch.channel(node.other());
    // plain transpose, not adjoint
    let row = hi.transpose() * &a.0;
    let through = (&row * hk)[(0, 0)];
    let signal = through.norm_sqr() * sp.power(node.other());
    let noise = row.norm_squared() * sp.sigma_r_sq;
    Ok((signal, noise))
}

/// Constraint functional
/// `f_i(A) = |h_i^T A h_k|^2 p_k - |h_i^T A|^2 sigma_R^2 gamma_i`;
/// the SINR target of node `i` is met iff `f_i(A) >= gamma_i sigma_i^2`.
pub fn constraint_value(
    node: Node,
    a: &BeamformMatrix,
    ch: &ChannelPair,
    sp: &SystemParams,
) -> Result<f64> {
    let (signal, noise) = signal_and_relay_noise(node, a, ch, sp)?;
    Ok(signal - noise * sp.gamma(node))
}

/// Linear SINR at `node`: `|h_i^T A h_k|^2 p_k / (|h_i^T A|^2 sigma_R^2 + sigma_i^2)`.
pub fn achieved_sinr(
    node: Node,
    a: &BeamformMatrix,
    ch: &ChannelPair,
    sp: &SystemParams,
) -> Result<f64> {
    let (signal, noise) = signal_and_relay_noise(node, a, ch, sp)?;
    Ok(signal / (noise + sp.noise_sq(node)))
}

/// Watts to dBW.
pub fn to_db(watts: f64) -> f64 {
    10.0 * watts.log10()
}
