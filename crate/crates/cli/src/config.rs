use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use twr_beamform::cg::{CgOptions, CgVariant};
use twr_beamform::model::{ChannelPair, SystemParams};
use twr_beamform::sim::{gen_channels, trial_rng};
use twr_beamform::solver::SolveOptions;

use crate::CliError;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgMode {
    Paper,
    #[default]
    Tight,
}

/// Single-instance configuration. Channels are either listed as `[re, im]`
/// pairs or drawn from `channel_seed`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub num_antennas: Option<usize>,
    pub p1: f64,
    pub p2: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma_r_sq: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub h1: Option<Vec<[f64; 2]>>,
    pub h2: Option<Vec<[f64; 2]>>,
    pub channel_seed: Option<u64>,
    #[serde(default)]
    pub cg_mode: CgMode,
    #[serde(default)]
    pub cg_variant: CgVariant,
}

fn complex(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|&[re, im]| Complex64::new(re, im)).collect()
}

impl SolveConfig {
    pub fn instance(&self, seed_override: Option<u64>) -> Result<(ChannelPair, SystemParams), CliError> {
        let (ch, m) = match (&self.h1, &self.h2, seed_override.or(self.channel_seed)) {
            (Some(h1), Some(h2), None) => {
                let ch = ChannelPair::from_slices(&complex(h1), &complex(h2))?;
                let m = ch.len();
                if let Some(n) = self.num_antennas.filter(|&n| n != m) {
                    return Err(CliError::Usage(format!("num_antennas = {n} but channels have {m} entries")));
                }
                (ch, m)
            }
            (None, None, Some(seed)) => {
                let m = self
                    .num_antennas
                    .ok_or_else(|| CliError::Usage("num_antennas is required with channel_seed".into()))?;
                if m < 2 {
                    return Err(CliError::Usage(format!("num_antennas must be at least 2, got {m}")));
                }
                (gen_channels(m, &mut trial_rng(seed, 0, 0)), m)
            }
            (Some(_), Some(_), Some(_)) => {
                return Err(CliError::Usage("give either h1/h2 or a channel seed, not both".into()))
            }
            _ => return Err(CliError::Usage("config needs both h1 and h2, or channel_seed".into())),
        };
        let sp = SystemParams {
            num_antennas: m,
            p1: self.p1,
            p2: self.p2,
            sigma1_sq: self.sigma1_sq,
            sigma2_sq: self.sigma2_sq,
            sigma_r_sq: self.sigma_r_sq,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
        };
        sp.validate()?;
        Ok((ch, sp))
    }

    pub fn solve_options(&self) -> SolveOptions {
        let base = match self.cg_mode {
            CgMode::Paper => CgOptions::paper(),
            CgMode::Tight => CgOptions::tight(),
        };
        SolveOptions {
            cg: CgOptions { variant: self.cg_variant, ..base },
        }
    }
}
