//! Sequence models with a sparse linear observation map `x(t) = A s(t) + noise`.
//!
//! DynVar puts the dynamics on the log-precisions of the source
//! innovations:
//!
//! ```text
//! x(t) ~ N(A s(t), diag e^{-v_x})
//! s(t) ~ N(s(t-1), diag e^{-u(t)})
//! u(t) ~ N(B u(t-1), diag e^{-v_u})
//! ```
//!
//! DynSrc puts them on the sources and keeps the log-precisions i.i.d.:
//!
//! ```text
//! s(t) ~ N(B s(t-1), diag e^{-u(t)})
//! u(t) ~ N(μ_u, diag e^{-v_u})
//! ```
//!
//! Node labels: `x(i)`, `vx(i)`, `s(j)`, `u(j)`, `vu(j)`, `mu_u(j)`, the
//! proxies `ps(j)`/`pu(j)`, the delays `ds(j)`/`du(j)`, and the linear maps
//! `A.*` and `B.*` (see [`build_linmap`](super::build_linmap)).
//!
//! Node counts with `m` unmasked entries of `A`:
//! DynVar `2 + 8·sdim + 2·sdim² + 2m + 3·xdim`,
//! DynSrc `2 + 7·sdim + 2·sdim² + 2m + 3·xdim`.

use serde::{Deserialize, Serialize};

use super::{build_linmap, circular_masks, DataInit, LinmapHandle};
use crate::error::{Error, Result};
use crate::graph::{Arity, ModelGraph, NodeId};
use crate::io::DataMatrix;
use crate::messages::ForwardStats;
use crate::network::Network;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DynKind {
    DynVar,
    DynSrc,
}

fn default_hyper() -> f64 {
    -5.0
}

/// Dimensions and priors shared by both dynamic models. `xdim` and `tdim`
/// come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynSpec {
    pub sdim: usize,
    /// `xdim × sdim`; circular regions when absent.
    #[serde(default)]
    pub mask: Option<Vec<Vec<bool>>>,
    /// Radius of the default circular regions, in pixels.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Mean of the weight priors.
    #[serde(default)]
    pub weight_mean: f64,
    /// Log-precision of the weight priors.
    #[serde(default)]
    pub weight_logprec: f64,
    /// Log-precision of the priors of `v_x`, `v_u` and `μ_u`.
    #[serde(default = "default_hyper")]
    pub hyper_logprec: f64,
    /// Data-driven source initialization; `null` for random starts.
    #[serde(default = "default_init")]
    pub init: Option<DataInit>,
}

fn default_init() -> Option<DataInit> {
    Some(DataInit::default())
}

impl DynSpec {
    pub fn new(sdim: usize) -> Self {
        Self {
            sdim,
            mask: None,
            radius: None,
            weight_mean: 0.0,
            weight_logprec: 0.0,
            hyper_logprec: default_hyper(),
            init: default_init(),
        }
    }

    pub fn mask_for(&self, xdim: usize) -> Vec<Vec<bool>> {
        self.mask.clone().unwrap_or_else(|| circular_masks(xdim, self.sdim, self.radius))
    }
}

/// Node handles of a built dynamic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynModel {
    pub kind: DynKind,
    pub xdim: usize,
    pub sdim: usize,
    pub a: LinmapHandle,
    pub b: LinmapHandle,
    pub s: Vec<NodeId>,
    pub u: Vec<NodeId>,
    pub vu: Vec<NodeId>,
    /// DynSrc only.
    pub mu_u: Vec<NodeId>,
    pub x: Vec<NodeId>,
    pub vx: Vec<NodeId>,
}

struct Priors {
    wmean: NodeId,
    wvar: NodeId,
    hmean: NodeId,
    hvar: NodeId,
    zero: NodeId,
}

fn priors<T: Real>(g: &mut ModelGraph<T>, spec: &DynSpec) -> Result<Priors> {
    // The two constants of the reference construction: 0 and the hyperprior
    // log-precision. Extra constants only when the `DynSpec` overrides them.
    let c0 = g.constant("c0", T::zero())?;
    let ch = g.constant("cn5", T::lit(spec.hyper_logprec))?;
    let wmean = if spec.weight_mean == 0.0 { c0 } else { g.constant("cwm", T::lit(spec.weight_mean))? };
    let wvar = if spec.weight_logprec == 0.0 { c0 } else { g.constant("cwv", T::lit(spec.weight_logprec))? };
    Ok(Priors { wmean, wvar, hmean: c0, hvar: ch, zero: c0 })
}

fn observations<T: Real>(
    g: &mut ModelGraph<T>,
    sums: &[NodeId],
    p: &Priors,
    data: Option<&DataMatrix>,
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    let (mut x, mut vx) = (Vec::new(), Vec::new());
    for (i, &sum) in sums.iter().enumerate() {
        let v = g.gaussian(&format!("vx({i})"), Arity::Scalar, p.hmean, p.hvar)?;
        let xi = match data {
            Some(d) => g.observed(&format!("x({i})"), d.column(i), sum, v)?,
            None => g.gaussian(&format!("x({i})"), Arity::Vector, sum, v)?,
        };
        x.push(xi);
        vx.push(v);
    }
    Ok((x, vx))
}

fn check_data(g_len: usize, xdim: usize, data: Option<&DataMatrix>) -> Result<()> {
    if let Some(d) = data {
        if d.cols != xdim {
            return Err(Error::DimensionMismatch { what: "data columns".into(), expected: xdim, got: d.cols });
        }
        if d.rows != g_len {
            return Err(Error::DimensionMismatch { what: "data rows".into(), expected: g_len, got: d.rows });
        }
    }
    Ok(())
}

/// Builds DynVar into `g` (whose sample count is the sequence length).
/// With `data`, the `x(i)` are observed columns of it.
///
/// Node count, proxies included, with `n` unmasked entries of `A`:
/// `2 + 8·sdim + 2·sdim² + 2·n + 3·xdim`.
pub fn build_dynvar<T: Real>(
    g: &mut ModelGraph<T>,
    spec: &DynSpec,
    xdim: usize,
    data: Option<&DataMatrix>,
) -> Result<DynModel> {
    check_data(g.sample_count(), xdim, data)?;
    let mask = spec.mask_for(xdim);
    let p = priors(g, spec)?;
    let sdim = spec.sdim;
    let pu: Vec<NodeId> =
        (0..sdim).map(|j| g.proxy(&format!("pu({j})"), &format!("u({j})"), Arity::Vector)).collect::<Result<_>>()?;
    let b = build_linmap(g, "B", &pu, sdim, None, p.wmean, p.wvar)?;
    let (mut s, mut u, mut vu) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..sdim {
        let v = g.gaussian(&format!("vu({j})"), Arity::Scalar, p.hmean, p.hvar)?;
        let du = g.delay(&format!("du({j})"), p.zero, b.sums[j])?;
        let uj = g.gaussian(&format!("u({j})"), Arity::Vector, du, v)?;
        let ps = g.proxy(&format!("ps({j})"), &format!("s({j})"), Arity::Vector)?;
        let ds = g.delay(&format!("ds({j})"), p.zero, ps)?;
        s.push(g.gaussian(&format!("s({j})"), Arity::Vector, ds, uj)?);
        u.push(uj);
        vu.push(v);
    }
    let a = build_linmap(g, "A", &s, xdim, Some(&mask), p.wmean, p.wvar)?;
    let (x, vx) = observations(g, &a.sums, &p, data)?;
    g.connect_proxies()?;
    Ok(DynModel { kind: DynKind::DynVar, xdim, sdim, a, b, s, u, vu, mu_u: Vec::new(), x, vx })
}

/// Builds DynSrc into `g`; see [`build_dynvar`]. Node count:
/// `2 + 7·sdim + 2·sdim² + 2·n + 3·xdim`.
pub fn build_dynsrc<T: Real>(
    g: &mut ModelGraph<T>,
    spec: &DynSpec,
    xdim: usize,
    data: Option<&DataMatrix>,
) -> Result<DynModel> {
    check_data(g.sample_count(), xdim, data)?;
    let mask = spec.mask_for(xdim);
    let p = priors(g, spec)?;
    let sdim = spec.sdim;
    let ps: Vec<NodeId> =
        (0..sdim).map(|j| g.proxy(&format!("ps({j})"), &format!("s({j})"), Arity::Vector)).collect::<Result<_>>()?;
    let b = build_linmap(g, "B", &ps, sdim, None, p.wmean, p.wvar)?;
    let (mut s, mut u, mut vu, mut mu_u) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for j in 0..sdim {
        let mu = g.gaussian(&format!("mu_u({j})"), Arity::Scalar, p.hmean, p.hvar)?;
        let v = g.gaussian(&format!("vu({j})"), Arity::Scalar, p.hmean, p.hvar)?;
        let uj = g.gaussian(&format!("u({j})"), Arity::Vector, mu, v)?;
        let ds = g.delay(&format!("ds({j})"), p.zero, b.sums[j])?;
        s.push(g.gaussian(&format!("s({j})"), Arity::Vector, ds, uj)?);
        u.push(uj);
        vu.push(v);
        mu_u.push(mu);
    }
    let a = build_linmap(g, "A", &s, xdim, Some(&mask), p.wmean, p.wvar)?;
    let (x, vx) = observations(g, &a.sums, &p, data)?;
    g.connect_proxies()?;
    Ok(DynModel { kind: DynKind::DynSrc, xdim, sdim, a, b, s, u, vu, mu_u, x, vx })
}

fn find_all<T: Real>(g: &ModelGraph<T>, stem: &str) -> Vec<NodeId> {
    (0..).map_while(|i| g.find(&format!("{stem}({i})"))).collect()
}

fn weights_of<T: Real>(g: &ModelGraph<T>, prefix: &str, rows: usize, cols: usize) -> LinmapHandle {
    let mut h = LinmapHandle { sums: Vec::new(), weights: Vec::new(), products: Vec::new(), mask: Vec::new() };
    for i in 0..rows {
        h.sums.extend(g.find(&format!("{prefix}.sum({i})")));
        let w: Vec<Option<NodeId>> = (0..cols).map(|j| g.find(&format!("{prefix}.a({i},{j})"))).collect();
        h.products.push((0..cols).map(|j| g.find(&format!("{prefix}.prod({i},{j})"))).collect());
        h.mask.push(w.iter().map(Option::is_some).collect());
        h.weights.push(w);
    }
    h
}

impl DynModel {
    /// Recovers the handles of a DynVar or DynSrc graph from its labels,
    /// for instance after loading a trained graph or pruning. Pruned
    /// weights are reported as absent.
    pub fn locate<T: Real>(g: &ModelGraph<T>) -> Result<Self> {
        let (x, vx, s, u, vu) =
            (find_all(g, "x"), find_all(g, "vx"), find_all(g, "s"), find_all(g, "u"), find_all(g, "vu"));
        let mu_u = find_all(g, "mu_u");
        if x.is_empty() || s.is_empty() {
            return Err(Error::invalid("dynamic model", "graph has no `x(i)` or `s(j)` nodes"));
        }
        if vx.len() != x.len() || u.len() != s.len() || vu.len() != s.len() {
            return Err(Error::invalid("dynamic model", "incomplete set of `vx`, `u` or `vu` nodes"));
        }
        let kind = if mu_u.is_empty() { DynKind::DynVar } else { DynKind::DynSrc };
        let (xdim, sdim) = (x.len(), s.len());
        Ok(Self {
            kind,
            xdim,
            sdim,
            a: weights_of(g, "A", xdim, sdim),
            b: weights_of(g, "B", sdim, sdim),
            s,
            u,
            vu,
            mu_u,
            x,
            vx,
        })
    }
}

/// Diagonal Gaussian over the next observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn at<T: Real>(net: &Network<T>, id: NodeId, t: usize) -> ForwardStats<f64> {
    let st = net.stats(id);
    let s = if st.len() == 1 { st[0] } else { st[t] };
    ForwardStats::new(s.mean.as_f64(), s.var.as_f64(), None)
}

/// `⟨e^{-v}⟩` for a Gaussian `v`.
fn exp_neg(s: ForwardStats<f64>) -> f64 {
    (-s.mean + 0.5 * s.var).exp()
}

/// `Σ_k w_k y_k` for independent weights and inputs: mean and variance.
fn mapped(terms: impl Iterator<Item = (ForwardStats<f64>, f64, f64)>) -> (f64, f64) {
    let (mut m, mut v) = (0.0, 0.0);
    for (w, ym, yv) in terms {
        m += w.mean * ym;
        v += w.mean * w.mean * yv + w.var * (yv + ym * ym);
    }
    (m, v)
}

/// Moment-matched one-step predictive distribution of `x(t+1)` from the
/// posterior at sample `t` (0-based). Valid for `t + 1 < T`.
pub fn predict_next<T: Real>(net: &Network<T>, model: &DynModel, t: usize) -> Result<PredictiveGaussian> {
    let len = net.sample_count();
    if t + 1 >= len {
        return Err(Error::OutOfRange { index: t, lo: 0, hi: len.saturating_sub(1) });
    }
    let g = net.graph();
    let live = |id: Option<NodeId>| id.filter(|&i| g.contains(i));
    let sdim = model.sdim;
    let s_now: Vec<ForwardStats<f64>> = model.s.iter().map(|&id| at(net, id, t)).collect();
    let brow = |j: usize, k: usize| live(model.b.weights.get(j).and_then(|r| r.get(k).copied()).flatten());
    // Covariance of the predicted sources. DynSrc mixes the current sources,
    // so predictions sharing a source are correlated; DynVar innovations
    // are independent.
    let mut mean = vec![0.0; sdim];
    let mut cov = vec![vec![0.0; sdim]; sdim];
    for j in 0..sdim {
        match model.kind {
            DynKind::DynVar => {
                let u_now: Vec<_> = model.u.iter().map(|&id| at(net, id, t)).collect();
                let (um, uv) =
                    mapped((0..sdim).filter_map(|k| brow(j, k).map(|w| (at(net, w, 0), u_now[k].mean, u_now[k].var))));
                let uv = uv + exp_neg(at(net, model.vu[j], 0));
                mean[j] = s_now[j].mean;
                cov[j][j] = s_now[j].var + (-um + 0.5 * uv).exp();
            }
            DynKind::DynSrc => {
                let (sm, sv) =
                    mapped((0..sdim).filter_map(|k| brow(j, k).map(|w| (at(net, w, 0), s_now[k].mean, s_now[k].var))));
                let mu = at(net, model.mu_u[j], 0);
                let uv = mu.var + exp_neg(at(net, model.vu[j], 0));
                mean[j] = sm;
                cov[j][j] = sv + (-mu.mean + 0.5 * uv).exp();
                for l in 0..j {
                    let c: f64 = (0..sdim)
                        .filter_map(|k| Some(at(net, brow(j, k)?, 0).mean * at(net, brow(l, k)?, 0).mean * s_now[k].var))
                        .sum();
                    cov[j][l] = c;
                    cov[l][j] = c;
                }
            }
        }
    }
    let mut out = PredictiveGaussian { mean: Vec::with_capacity(model.xdim), var: Vec::with_capacity(model.xdim) };
    for i in 0..model.xdim {
        let w: Vec<Option<ForwardStats<f64>>> = (0..sdim)
            .map(|j| live(model.a.weights.get(i).and_then(|r| r.get(j).copied()).flatten()).map(|a| at(net, a, 0)))
            .collect();
        let (m, mut v) =
            mapped((0..sdim).filter_map(|j| w[j].map(|a| (a, mean[j], cov[j][j]))));
        for j in 0..sdim {
            for l in 0..sdim {
                if let (true, Some(a), Some(b)) = (j != l, w[j], w[l]) {
                    v += a.mean * b.mean * cov[j][l];
                }
            }
        }
        out.mean.push(m);
        out.var.push(v + exp_neg(at(net, model.vx[i], 0)));
    }
    Ok(out)
}
