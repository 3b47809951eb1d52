//! Synthetic data from the DynVar generative process with a prescribed
//! log-precision profile, and from a static factor model with a known
//! number of active sources.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::circular_masks;
use crate::error::{Error, Result};
use crate::io::DataMatrix;

/// Log-precision `u(t)` of the source innovations over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MotionProfile {
    Constant { u: f64 },
    /// `before` for `t < at`, `after` from then on.
    Step { before: f64, after: f64, at: usize },
    /// `active` for `start ≤ t < end`, `base` elsewhere.
    Window { base: f64, active: f64, start: usize, end: usize },
}

impl MotionProfile {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            MotionProfile::Constant { u } => u,
            MotionProfile::Step { before, after, at } => {
                if t < at {
                    before
                } else {
                    after
                }
            }
            MotionProfile::Window { base, active, start, end } => {
                if (start..end).contains(&t) {
                    active
                } else {
                    base
                }
            }
        }
    }

    /// Quiet outside the middle third, e^2 times more variable inside it.
    pub fn middle_window(tdim: usize) -> Self {
        MotionProfile::Window { base: 1.0, active: -1.0, start: tdim / 3, end: 2 * tdim / 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub xdim: usize,
    pub sdim: usize,
    pub tdim: usize,
    pub seed: u64,
    pub profile: MotionProfile,
    /// Log-precision of the observation noise.
    pub noise_logprec: f64,
    /// Radius of the circular regions; the default when absent.
    pub radius: Option<f64>,
}

impl SynthParams {
    pub fn new(xdim: usize, sdim: usize, tdim: usize, seed: u64) -> Self {
        Self { xdim, sdim, tdim, seed, profile: MotionProfile::middle_window(tdim), noise_logprec: 4.0, radius: None }
    }
}

/// Generated sequence with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthetic {
    /// `tdim × xdim` observations.
    pub data: DataMatrix,
    /// `tdim × sdim` true log-precisions.
    pub u: DataMatrix,
    /// `tdim × sdim` true sources.
    pub s: DataMatrix,
    /// `xdim × sdim` mixing matrix, zero outside the mask.
    pub a: DataMatrix,
    pub mask: Vec<Vec<bool>>,
}

fn check_dims(dims: &[(&str, usize)]) -> Result<()> {
    for &(name, d) in dims {
        if d == 0 {
            return Err(Error::invalid(name, "must be positive"));
        }
    }
    Ok(())
}

/// `s_j(t) = s_j(t-1) + e^{-u(t)/2} ε`, `s_j(-1) = 0`, and
/// `x(t) = A s(t) + e^{-v_x/2} ε` with `A` standard normal on the circular
/// mask. Deterministic in the seed.
pub fn synth_sequence(p: &SynthParams) -> Result<Synthetic> {
    check_dims(&[("xdim", p.xdim), ("sdim", p.sdim), ("tdim", p.tdim)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut normal = move || rng.sample::<f64, _>(StandardNormal);
    let mask = circular_masks(p.xdim, p.sdim, p.radius);
    let mut a = DataMatrix::zeros(p.xdim, p.sdim);
    for i in 0..p.xdim {
        for j in 0..p.sdim {
            if mask[i][j] {
                a.set(i, j, normal());
            }
        }
    }
    let (mut u, mut s, mut x) =
        (DataMatrix::zeros(p.tdim, p.sdim), DataMatrix::zeros(p.tdim, p.sdim), DataMatrix::zeros(p.tdim, p.xdim));
    let noise = (-0.5 * p.noise_logprec).exp();
    let mut prev = vec![0.0; p.sdim];
    for t in 0..p.tdim {
        let ut = p.profile.at(t);
        for (j, pj) in prev.iter_mut().enumerate() {
            *pj += (-0.5 * ut).exp() * normal();
            u.set(t, j, ut);
            s.set(t, j, *pj);
        }
        for i in 0..p.xdim {
            let clean: f64 = (0..p.sdim).map(|j| a.get(i, j) * prev[j]).sum();
            x.set(t, i, clean + noise * normal());
        }
    }
    Ok(Synthetic { data: x, u, s, a, mask })
}

/// Static factor data with `active` sources of unit variance and weights of
/// magnitude in `[0.5, 1.5]` with random signs. With a mask (`xdim × active`)
/// the unmasked weights are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorData {
    pub data: DataMatrix,
    pub a: DataMatrix,
    pub s: DataMatrix,
}

pub fn synth_factor(
    xdim: usize,
    active: usize,
    tdim: usize,
    noise_logprec: f64,
    mask: Option<&[Vec<bool>]>,
    seed: u64,
) -> Result<FactorData> {
    check_dims(&[("xdim", xdim), ("active", active), ("tdim", tdim)])?;
    if let Some(m) = mask {
        if m.len() != xdim {
            return Err(Error::DimensionMismatch { what: "mask rows".into(), expected: xdim, got: m.len() });
        }
        if let Some(r) = m.iter().find(|r| r.len() != active) {
            return Err(Error::DimensionMismatch { what: "mask columns".into(), expected: active, got: r.len() });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DataMatrix::zeros(xdim, active);
    for i in 0..xdim {
        for j in 0..active {
            let mag: f64 = rng.random_range(0.5..1.5);
            let on = mask.is_none_or(|m| m[i][j]);
            a.set(i, j, if !on { 0.0 } else if rng.random_bool(0.5) { mag } else { -mag });
        }
    }
    let noise = (-0.5 * noise_logprec).exp();
    let mut s = DataMatrix::zeros(tdim, active);
    let mut x = DataMatrix::zeros(tdim, xdim);
    for t in 0..tdim {
        for j in 0..active {
            s.set(t, j, rng.sample::<f64, _>(StandardNormal));
        }
        for i in 0..xdim {
            let clean: f64 = (0..active).map(|j| a.get(i, j) * s.get(t, j)).sum();
            x.set(t, i, clean + noise * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(FactorData { data: x, a, s })
}
