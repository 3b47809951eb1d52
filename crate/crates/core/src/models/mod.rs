//! Model builders: masked linear maps, the two dynamic models, a static
//! factor model, one-step prediction and synthetic data.

mod dynamic;
mod factor;
mod synth;

pub use dynamic::{build_dynsrc, build_dynvar, predict_next, DynKind, DynModel, DynSpec, PredictiveGaussian};
pub use factor::{build_factor, FactorModel, FactorSpec};
pub use synth::{synth_factor, synth_sequence, FactorData, MotionProfile, SynthParams, Synthetic};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Arity, ModelGraph, NodeId};
use crate::io::DataMatrix;
use crate::network::Network;
use crate::scalar::Real;

/// Handles of a masked linear map `y = W x`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinmapHandle {
    /// One sum node per output.
    pub sums: Vec<NodeId>,
    /// `weights[i][j]` exists iff `mask[i][j]`.
    pub weights: Vec<Vec<Option<NodeId>>>,
    pub products: Vec<Vec<Option<NodeId>>>,
    pub mask: Vec<Vec<bool>>,
}

/// Builds `outdim` sums `y_i = Σ_j w_ij x_j` over the unmasked entries.
/// Each weight is a scalar Gaussian with mean parent `prior_mean` and
/// variance parent `prior_var`. Labels are `{prefix}.a(i,j)`,
/// `{prefix}.prod(i,j)` and `{prefix}.sum(i)`.
pub fn build_linmap<T: Real>(
    g: &mut ModelGraph<T>,
    prefix: &str,
    inputs: &[NodeId],
    outdim: usize,
    mask: Option<&[Vec<bool>]>,
    prior_mean: NodeId,
    prior_var: NodeId,
) -> Result<LinmapHandle> {
    let mask: Vec<Vec<bool>> = match mask {
        Some(m) => m.to_vec(),
        None => vec![vec![true; inputs.len()]; outdim],
    };
    if mask.len() != outdim {
        return Err(Error::DimensionMismatch { what: format!("{prefix} mask rows"), expected: outdim, got: mask.len() });
    }
    for (i, row) in mask.iter().enumerate() {
        if row.len() != inputs.len() {
            return Err(Error::DimensionMismatch {
                what: format!("{prefix} mask row {i}"),
                expected: inputs.len(),
                got: row.len(),
            });
        }
        if !row.iter().any(|&b| b) {
            return Err(Error::EmptyRow(i));
        }
    }
    let arities = inputs.iter().map(|&x| g.effective_arity(x)).collect::<Result<Vec<_>>>()?;
    let mut h = LinmapHandle { sums: Vec::new(), weights: Vec::new(), products: Vec::new(), mask: mask.clone() };
    for (i, row) in mask.iter().enumerate() {
        let (mut wrow, mut prow, mut terms) = (Vec::new(), Vec::new(), Vec::new());
        let mut arity = Arity::Scalar;
        for (j, &on) in row.iter().enumerate() {
            if !on {
                wrow.push(None);
                prow.push(None);
                continue;
            }
            let a = g.gaussian(&format!("{prefix}.a({i},{j})"), Arity::Scalar, prior_mean, prior_var)?;
            let p = g.product(&format!("{prefix}.prod({i},{j})"), arities[j], a, inputs[j])?;
            if arities[j] == Arity::Vector {
                arity = Arity::Vector;
            }
            wrow.push(Some(a));
            prow.push(Some(p));
            terms.push(p);
        }
        h.sums.push(g.sum(&format!("{prefix}.sum({i})"), arity, &terms)?);
        h.weights.push(wrow);
        h.products.push(prow);
    }
    Ok(h)
}

/// Most nearly square `(rows, cols)` factorization of `n`, `rows ≤ cols`.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let mut r = (n as f64).sqrt().floor() as usize;
    while r > 1 && n % r != 0 {
        r -= 1;
    }
    (r.max(1), n / r.max(1))
}

/// Default radius for [`circular_masks`]: a disc covering about half the patch.
pub fn default_radius(rows: usize, cols: usize) -> f64 {
    ((rows * cols) as f64 / (2.0 * std::f64::consts::PI)).sqrt()
}

/// `xdim × sdim` mask in which source `j` reaches the pixels within
/// `radius` of its center. Pixels are laid out on the [`grid_shape`] of
/// `xdim`; centers sit on a regular grid of cells. A pixel outside every
/// disc is connected to its nearest center, so no row is empty.
pub fn circular_masks(xdim: usize, sdim: usize, radius: Option<f64>) -> Vec<Vec<bool>> {
    let (rows, cols) = grid_shape(xdim);
    let radius = radius.unwrap_or_else(|| default_radius(rows, cols));
    let gr = ((sdim as f64).sqrt().floor() as usize).max(1);
    let gc = sdim.div_ceil(gr);
    let centers: Vec<(f64, f64)> = (0..sdim)
        .map(|j| {
            let (a, b) = (j / gc, j % gc);
            ((a as f64 + 0.5) * rows as f64 / gr as f64, (b as f64 + 0.5) * cols as f64 / gc as f64)
        })
        .collect();
    (0..xdim)
        .map(|i| {
            let (y, x) = ((i / cols) as f64 + 0.5, (i % cols) as f64 + 0.5);
            let d: Vec<f64> = centers.iter().map(|&(cy, cx)| ((y - cy).powi(2) + (x - cx).powi(2)).sqrt()).collect();
            let mut row: Vec<bool> = d.iter().map(|&dj| dj <= radius).collect();
            if !row.iter().any(|&b| b) && sdim > 0 {
                let near = d.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(j, _)| j).unwrap_or(0);
                row[near] = true;
            }
            row
        })
        .collect()
}

/// `exp(−mean_i log N(x_i | mean_i, var_i))`.
pub fn predictive_perplexity(pred: &PredictiveGaussian, x: &[f64]) -> Result<f64> {
    if pred.mean.len() != x.len() {
        return Err(Error::DimensionMismatch { what: "observation".into(), expected: pred.mean.len(), got: x.len() });
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let total: f64 = x
        .iter()
        .zip(pred.mean.iter().zip(&pred.var))
        .map(|(&xi, (&m, &v))| -0.5 * (ln2pi + v.ln() + (xi - m).powi(2) / v))
        .sum();
    Ok((-total / x.len() as f64).exp())
}

/// Data-driven start for the sources of a linear-map model: a masked
/// factorization of the data gives source trajectories, which become the
/// initial posterior means and the targets of fading evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataInit {
    pub als_iters: usize,
    pub restarts: usize,
    /// Precision of the evidence on each source sample.
    pub precision: f64,
    pub fade_sweeps: usize,
}

impl Default for DataInit {
    fn default() -> Self {
        Self { als_iters: 50, restarts: 4, precision: 1.0, fade_sweeps: 20 }
    }
}

impl DataInit {
    /// Sets the sources `sources` (one per mask column) from `data`.
    pub fn apply<T: Real>(
        &self,
        g: &mut ModelGraph<T>,
        sources: &[NodeId],
        mask: &[Vec<bool>],
        data: &DataMatrix,
        seed: u64,
    ) -> Result<Vec<NodeId>> {
        let (s, _) = masked_factorization(data, mask, self.als_iters, self.restarts, seed)?;
        attach_source_evidence(g, sources, &s, self.precision, self.fade_sweeps)
    }
}

/// Model description accepted by the command line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    Dynvar(DynSpec),
    Dynsrc(DynSpec),
    Factor(FactorSpec),
    /// A full graph document; the data columns are bound to the nodes
    /// listed in `observed`, in order.
    Graph { graph: serde_json::Value, observed: Vec<String> },
}

impl ModelSpec {
    /// Builds the model for `data` (rows = samples, columns = dimensions).
    /// `seed` drives the data-driven initialization, if the model description asks for one.
    pub fn build(&self, data: &DataMatrix, seed: u64) -> Result<Network<f64>> {
        let mut g = ModelGraph::new(data.rows)?;
        match self {
            ModelSpec::Dynvar(s) | ModelSpec::Dynsrc(s) => {
                let m = if matches!(self, ModelSpec::Dynvar(_)) {
                    build_dynvar(&mut g, s, data.cols, Some(data))?
                } else {
                    build_dynsrc(&mut g, s, data.cols, Some(data))?
                };
                if let Some(init) = &s.init {
                    init.apply(&mut g, &m.s, &m.a.mask, data, seed)?;
                }
            }
            ModelSpec::Factor(s) => {
                let m = build_factor(&mut g, s, data.cols, Some(data))?;
                if let Some(init) = &s.init {
                    init.apply(&mut g, &m.s, &m.a.mask, data, seed)?;
                }
            }
            ModelSpec::Graph { graph, observed } => {
                g = ModelGraph::from_json(&graph.to_string())?;
                if g.sample_count() != data.rows {
                    return Err(Error::DimensionMismatch {
                        what: "sample_count".into(),
                        expected: g.sample_count(),
                        got: data.rows,
                    });
                }
                if observed.len() != data.cols {
                    return Err(Error::DimensionMismatch { what: "observed".into(), expected: observed.len(), got: data.cols });
                }
                for (c, label) in observed.iter().enumerate() {
                    let id = g.find(label).ok_or_else(|| Error::UnknownLabel(label.clone()))?;
                    g.set_observed(id, data.column(c))?;
                }
            }
        }
        Network::new(g)
    }
}

/// Data-driven source initialization: source `j` is the leading principal
/// component of the pixels in column `j` of `mask` (`xdim × sdim`),
/// projected from the centered data. Returns `tdim × sdim`.
pub fn regional_pca(data: &DataMatrix, mask: &[Vec<bool>]) -> Result<DataMatrix> {
    if mask.len() != data.cols {
        return Err(Error::DimensionMismatch { what: "mask rows".into(), expected: data.cols, got: mask.len() });
    }
    let sdim = mask.first().map_or(0, Vec::len);
    let mut out = DataMatrix::zeros(data.rows, sdim);
    let means: Vec<f64> = (0..data.cols).map(|c| (0..data.rows).map(|r| data.get(r, c)).sum::<f64>() / data.rows as f64).collect();
    for j in 0..sdim {
        let pix: Vec<usize> = (0..data.cols).filter(|&i| mask[i][j]).collect();
        if pix.is_empty() {
            continue;
        }
        let centered = nalgebra::DMatrix::from_fn(data.rows, pix.len(), |r, k| data.get(r, pix[k]) - means[pix[k]]);
        let cov = centered.transpose() * &centered;
        let eig = nalgebra::SymmetricEigen::new(cov);
        let lead = eig.eigenvalues.imax();
        let mut dir = eig.eigenvectors.column(lead).into_owned();
        // Fix the sign so the largest loading is positive.
        if dir[dir.iamax()] < 0.0 {
            dir = -dir;
        }
        let proj = centered * dir;
        for r in 0..data.rows {
            out.set(r, j, proj[r]);
        }
    }
    Ok(out)
}

/// Starts each source at its target and adds fading evidence towards it.
/// `targets` is `T × sources.len()`. Returns the evidence nodes.
pub fn attach_source_evidence<T: Real>(
    g: &mut ModelGraph<T>,
    sources: &[NodeId],
    targets: &DataMatrix,
    precision: f64,
    fade_sweeps: usize,
) -> Result<Vec<NodeId>> {
    if targets.cols != sources.len() {
        return Err(Error::DimensionMismatch { what: "evidence targets".into(), expected: sources.len(), got: targets.cols });
    }
    let mut ev = Vec::new();
    for (j, &s) in sources.iter().enumerate() {
        let target: Vec<T> = targets.column(j);
        for (t, &m) in target.iter().enumerate() {
            g.set_posterior(s, t, m, T::lit(1.0 / precision))?;
        }
        let schedule = crate::variables::EvidenceSchedule::new(target, T::lit(precision), fade_sweeps)?;
        let label = format!("evidence({})", g.label(s));
        ev.push(g.evidence(&label, s, schedule)?);
    }
    Ok(ev)
}

/// Masked low-rank factorization `X ≈ S Aᵀ` (`A` zero outside `mask`) by
/// alternating least squares. The first start is [`regional_pca`], the
/// other `restarts` are random (seeded); the fit with the smallest residual
/// wins. Data are centered per column. Returns `(S, A)` with `S` of size
/// `T × sdim` and `A` of size `xdim × sdim`, each column of `A` scaled to
/// unit root mean square over its mask, the scale of a standard normal
/// weight prior.
pub fn masked_factorization(
    data: &DataMatrix,
    mask: &[Vec<bool>],
    iters: usize,
    restarts: usize,
    seed: u64,
) -> Result<(DataMatrix, DataMatrix)> {
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    let s0 = regional_pca(data, mask)?;
    let (t_len, xdim, sdim) = (data.rows, data.cols, s0.cols);
    let means: Vec<f64> = (0..xdim).map(|c| (0..t_len).map(|r| data.get(r, c)).sum::<f64>() / t_len as f64).collect();
    let x = DMatrix::from_fn(t_len, xdim, |r, c| data.get(r, c) - means[c]);
    let ridge = 1e-9;
    let fit = |mut s: DMatrix<f64>| {
        let mut a = DMatrix::<f64>::zeros(xdim, sdim);
        for _ in 0..iters.max(1) {
            // Only the product matters; keep the sources at unit variance.
            for j in 0..sdim {
                let sd = (s.column(j).norm_squared() / t_len as f64).sqrt();
                if sd > 0.0 {
                    s.column_mut(j).scale_mut(1.0 / sd);
                }
            }
            let gram = s.transpose() * &s;
            let xs = x.transpose() * &s;
            for i in 0..xdim {
                let cols: Vec<usize> = (0..sdim).filter(|&j| mask[i][j]).collect();
                let k = cols.len();
                let g = DMatrix::from_fn(k, k, |p, q| gram[(cols[p], cols[q])] + if p == q { ridge } else { 0.0 });
                let b = DVector::from_fn(k, |p, _| xs[(i, cols[p])]);
                let sol = g.cholesky().map(|c| c.solve(&b)).unwrap_or_else(|| DVector::zeros(k));
                for (p, &j) in cols.iter().enumerate() {
                    a[(i, j)] = sol[p];
                }
            }
            let ata = a.transpose() * &a + DMatrix::identity(sdim, sdim) * ridge;
            if let Some(ch) = ata.cholesky() {
                s = ch.solve(&(&x * &a).transpose()).transpose();
            }
        }
        let resid = (&x - &s * a.transpose()).norm_squared();
        (resid, s, a)
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut best = fit(DMatrix::from_fn(t_len, sdim, |r, c| s0.get(r, c)));
    for _ in 0..restarts {
        let start = DMatrix::from_fn(t_len, sdim, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let cand = fit(start);
        if cand.0 < best.0 {
            best = cand;
        }
    }
    let (_, mut s, mut a) = best;
    for j in 0..sdim {
        let n = (0..xdim).filter(|&i| mask[i][j]).count();
        let rms = (a.column(j).norm_squared() / n.max(1) as f64).sqrt();
        if rms > 0.0 {
            a.column_mut(j).scale_mut(1.0 / rms);
            s.column_mut(j).scale_mut(rms);
        }
    }
    let s_out = DataMatrix::new(t_len, sdim, (0..t_len).flat_map(|r| (0..sdim).map(move |c| (r, c))).map(|(r, c)| s[(r, c)]).collect())?;
    let a_out = DataMatrix::new(xdim, sdim, (0..xdim).flat_map(|r| (0..sdim).map(move |c| (r, c))).map(|(r, c)| a[(r, c)]).collect())?;
    Ok((s_out, a_out))
}
