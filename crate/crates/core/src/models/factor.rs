//! Static factor model `x(t) ~ N(A s(t), diag e^{-v_x})`, `s_j(t) ~ N(0, 1)`.
//!
//! Labels: `s(j)`, `x(i)`, `vx(i)` and the map `A.*`. Node count with `m`
//! unmasked weights: `2 + sdim + 2m + 3·xdim`.

use serde::{Deserialize, Serialize};

use super::{build_linmap, DataInit, LinmapHandle};
use crate::error::{Error, Result};
use crate::graph::{Arity, ModelGraph, NodeId};
use crate::io::DataMatrix;
use crate::scalar::Real;

fn default_hyper() -> f64 {
    -5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub sdim: usize,
    /// `xdim × sdim`; full when absent.
    #[serde(default)]
    pub mask: Option<Vec<Vec<bool>>>,
    #[serde(default = "default_hyper")]
    pub hyper_logprec: f64,
    /// Data-driven source initialization; random starts when absent.
    #[serde(default)]
    pub init: Option<DataInit>,
}

impl FactorSpec {
    pub fn new(sdim: usize) -> Self {
        Self { sdim, mask: None, hyper_logprec: default_hyper(), init: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub a: LinmapHandle,
    pub s: Vec<NodeId>,
    pub x: Vec<NodeId>,
    pub vx: Vec<NodeId>,
}

pub fn build_factor<T: Real>(
    g: &mut ModelGraph<T>,
    spec: &FactorSpec,
    xdim: usize,
    data: Option<&DataMatrix>,
) -> Result<FactorModel> {
    if let Some(d) = data {
        if d.cols != xdim {
            return Err(Error::DimensionMismatch { what: "data columns".into(), expected: xdim, got: d.cols });
        }
    }
    let c0 = g.constant("c0", T::zero())?;
    let ch = g.constant("cn5", T::lit(spec.hyper_logprec))?;
    let s: Vec<NodeId> =
        (0..spec.sdim).map(|j| g.gaussian(&format!("s({j})"), Arity::Vector, c0, c0)).collect::<Result<_>>()?;
    let a = build_linmap(g, "A", &s, xdim, spec.mask.as_deref(), c0, c0)?;
    let (mut x, mut vx) = (Vec::new(), Vec::new());
    for (i, &sum) in a.sums.iter().enumerate() {
        let v = g.gaussian(&format!("vx({i})"), Arity::Scalar, c0, ch)?;
        x.push(match data {
            Some(d) => g.observed(&format!("x({i})"), d.column(i), sum, v)?,
            None => g.gaussian(&format!("x({i})"), Arity::Vector, sum, v)?,
        });
        vx.push(v);
    }
    Ok(FactorModel { a, s, x, vx })
}
