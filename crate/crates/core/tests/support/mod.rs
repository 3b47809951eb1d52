//! Independent numerical oracles and graph generators shared by the test
//! suites.

#![allow(dead_code)]

pub mod table;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vbblocks::models::{circular_masks, synth_factor, FactorSpec, ModelSpec};
use vbblocks::structure::{cascade_remove, prune, CascadePolicy, PruneReport};
use vbblocks::{train, Arity, Graph, Net, NodeId, NonlinKind, TrainConfig};

/// Gauss–Hermite nodes and weights for `∫ e^{-x²} f(x) dx` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let j = nalgebra::DMatrix::from_fn(n, n, |i, k| {
        if i + 1 == k || k + 1 == i {
            (i.max(k) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[f(X)]`, `X ~ N(mu, var)`, by Gauss–Hermite with `n` nodes.
pub fn gh_expect(f: impl Fn(f64) -> f64, mu: f64, var: f64, n: usize) -> f64 {
    let (x, w) = gauss_hermite(n);
    let s = (2.0 * var).sqrt();
    x.iter().zip(&w).map(|(&xi, &wi)| wi * f(mu + s * xi)).sum::<f64>() / std::f64::consts::PI.sqrt()
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Adaptive Simpson on `pieces` equal subintervals, so that narrow mass is
/// never skipped by the first coarse samples.
pub fn simpson_pieces(f: &impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize, tol: f64) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces).map(|i| simpson(f, a + i as f64 * h, a + (i + 1) as f64 * h, tol / pieces as f64)).sum()
}

/// `E[f(X)]`, `X ~ N(mu, var)`, by adaptive Simpson over ±14σ with the
/// interval split at `breaks` (kinks of `f`).
pub fn simpson_expect(f: impl Fn(f64) -> f64, mu: f64, var: f64, breaks: &[f64]) -> f64 {
    let sd = var.sqrt();
    let dens = |x: f64| (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let g = |x: f64| f(x) * dens(x);
    let (lo, hi) = (mu - 14.0 * sd, mu + 14.0 * sd);
    let mut pts = vec![lo];
    pts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    pts.push(hi);
    pts.windows(2).map(|w| simpson(&g, w[0], w[1], 1e-14)).sum()
}

/// Sample mean and the standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Sample variance and an estimate of its standard error.
pub fn var_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let d2: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let (v, _) = mean_se(&d2);
    let m4 = d2.iter().map(|d| d * d).sum::<f64>() / n;
    (v * n / (n - 1.0), ((m4 - v * v) / n).sqrt())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Central finite-difference derivative.
pub fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Random graph that passes validation: up to `max_nodes` nodes over `t`
/// samples, mixing every variable and computational kind, with observed
/// leaves. Retries until validation succeeds.
pub fn random_graph(seed: u64, max_nodes: usize, t: usize) -> Graph {
    let mut attempt = 0u64;
    loop {
        let g = try_random_graph(seed.wrapping_mul(7919).wrapping_add(attempt), max_nodes, t);
        if let Some(g) = g {
            if g.validate().is_ok() {
                return g;
            }
        }
        attempt += 1;
        assert!(attempt < 10_000, "random graph generator never produced a valid graph");
    }
}

fn try_random_graph(seed: u64, max_nodes: usize, t: usize) -> Option<Graph> {
    let mut r = rng(seed);
    let mut g = Graph::new(t).ok()?;
    let c0 = g.constant("c0", 0.0).ok()?;
    let cv = g.constant("cv", r.random_range(-1.0..2.0)).ok()?;
    // Value providers usable as means; variance-capable nodes; Gaussians
    // usable as nonlinearity inputs. Computational nodes are consumed once.
    let mut values: Vec<NodeId> = vec![c0];
    let mut vars: Vec<NodeId> = vec![cv, c0];
    let mut gaussians: Vec<NodeId> = Vec::new();
    let mut vectors: Vec<NodeId> = Vec::new();
    let mut free_comp: Vec<NodeId> = Vec::new();
    let budget = r.random_range(6..=max_nodes.saturating_sub(4).max(6));
    let mut k = 0;
    let pick = |r: &mut ChaCha8Rng, v: &Vec<NodeId>| v[r.random_range(0..v.len())];
    while g.node_count() < budget {
        k += 1;
        let label = |s: &str| format!("{s}{k}");
        let arity = if r.random_bool(0.5) { Arity::Vector } else { Arity::Scalar };
        let choice = r.random_range(0..10);
        // Mean parent: prefer an unconsumed computational node.
        let take_mean = |r: &mut ChaCha8Rng, free: &mut Vec<NodeId>, values: &Vec<NodeId>| {
            if !free.is_empty() && r.random_bool(0.7) {
                free.swap_remove(r.random_range(0..free.len()))
            } else {
                values[r.random_range(0..values.len())]
            }
        };
        match choice {
            0..=2 => {
                let m = take_mean(&mut r, &mut free_comp, &values);
                let v = pick(&mut r, &vars);
                let arity = if g.effective_arity(m).ok()? == Arity::Vector || g.effective_arity(v).ok()? == Arity::Vector {
                    Arity::Vector
                } else {
                    arity
                };
                let id = g.gaussian(&label("g"), arity, m, v).ok()?;
                values.push(id);
                vars.push(id);
                gaussians.push(id);
                if arity == Arity::Vector {
                    vectors.push(id);
                }
            }
            3 if values.len() >= 2 => {
                let (a, b) = (pick(&mut r, &values), pick(&mut r, &values));
                if a == b {
                    continue;
                }
                let ar = vec_arity(&g, &[a, b])?;
                free_comp.push(g.sum(&label("sum"), ar, &[a, b]).ok()?);
            }
            4 if values.len() >= 2 => {
                let (a, b) = (pick(&mut r, &values), pick(&mut r, &values));
                if a == b {
                    continue;
                }
                let ar = vec_arity(&g, &[a, b])?;
                free_comp.push(g.product(&label("prod"), ar, a, b).ok()?);
            }
            5 if !gaussians.is_empty() => {
                let s = pick(&mut r, &gaussians);
                let kind = if r.random_bool(0.5) { NonlinKind::ExpSquare } else { NonlinKind::Cut };
                free_comp.push(g.nonlinearity(kind, &label("f"), s).ok()?);
            }
            6 => {
                let v = pick(&mut r, &vars);
                let ar = if g.effective_arity(v).ok()? == Arity::Vector { Arity::Vector } else { arity };
                let id = g.rectified(&label("r"), ar, v).ok()?;
                values.push(id);
            }
            7 if !vectors.is_empty() => {
                let x = pick(&mut r, &vectors);
                let init = pick(&mut r, &values);
                if g.effective_arity(init).ok()? == Arity::Vector {
                    continue;
                }
                free_comp.push(g.delay(&label("d"), init, x).ok()?);
            }
            8 => {
                let kc = r.random_range(2..=3);
                let comps: Vec<(NodeId, NodeId)> = (0..kc).map(|_| (pick(&mut r, &values), pick(&mut r, &vars))).collect();
                let vec = comps.iter().any(|&(m, v)| {
                    g.effective_arity(m).ok() == Some(Arity::Vector) || g.effective_arity(v).ok() == Some(Arity::Vector)
                });
                let dir = g.dirichlet(&label("pi"), vec![]).ok()?;
                let ar = if vec { Arity::Vector } else { arity };
                let id = g.mixture(&label("mix"), ar, &comps, dir).ok()?;
                values.push(id);
            }
            _ => {
                let m = take_mean(&mut r, &mut free_comp, &values);
                let v = pick(&mut r, &vars);
                let data: Vec<f64> = (0..t).map(|_| 2.0 * normal(&mut r)).collect();
                g.observed(&label("x"), data, m, v).ok()?;
            }
        }
    }
    // Every dangling computational node gets an observed child, so that
    // every latent variable is connected to data somewhere.
    while let Some(c) = free_comp.pop() {
        k += 1;
        let v = pick(&mut r, &vars);
        let data: Vec<f64> = (0..t).map(|_| 2.0 * normal(&mut r)).collect();
        g.observed(&format!("xo{k}"), data, c, v).ok()?;
    }
    if g.node_count() > max_nodes {
        return None;
    }
    Some(g)
}

fn vec_arity(g: &Graph, ids: &[NodeId]) -> Option<Arity> {
    let mut a = Arity::Scalar;
    for &i in ids {
        if g.effective_arity(i).ok()? == Arity::Vector {
            a = Arity::Vector;
        }
    }
    Some(a)
}

/// Random-walk source observed in noise, with learned noise and step
/// log-precisions. Plain sweeps converge slowly along the chain, which makes
/// it a good toy for joint-direction steps.
pub fn random_walk_toy(t: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut s = 0.0;
    let x: Vec<f64> = (0..t)
        .map(|_| {
            s += 0.3 * normal(&mut r);
            s + 0.1 * normal(&mut r)
        })
        .collect();
    let mut g = Graph::new(t).unwrap();
    let c0 = g.constant("c0", 0.0).unwrap();
    let c2 = g.constant("c2", -2.0).unwrap();
    let vs = g.gaussian("vs", Arity::Scalar, c0, c2).unwrap();
    let vx = g.gaussian("vx", Arity::Scalar, c0, c2).unwrap();
    let ps = g.proxy("ps", "s", Arity::Vector).unwrap();
    let d = g.delay("ds", c0, ps).unwrap();
    let s = g.gaussian("s", Arity::Vector, d, vs).unwrap();
    g.observed("x", x, s, vx).unwrap();
    g.connect_proxies().unwrap();
    g
}

/// Cost change of actually removing `id`: cascade on a copy, rebuild, and
/// evaluate both networks in full.
pub fn removal_oracle(net: &Net, id: NodeId, policy: &CascadePolicy) -> f64 {
    let before = net.total_cost().unwrap();
    let mut g = net.clone().into_graph();
    cascade_remove(&mut g, id, policy).unwrap();
    Net::new(g).unwrap().total_cost().unwrap() - before
}

pub struct OccamRun {
    /// The spurious source and exactly its weights were removed.
    pub exact: bool,
    pub reports: Vec<PruneReport>,
    /// Largest gap between a priced delta and the two-evaluation oracle.
    pub oracle_err: f64,
    pub candidates_checked: usize,
}

/// Factor data from three localized sources, modelled with four; the
/// fourth source's region is the spurious one. Trains, then alternates
/// pruning and retraining until pruning stops.
pub fn occam_trial(seed: u64) -> OccamRun {
    let xdim = 16;
    let mask = circular_masks(xdim, 4, None);
    let truth: Vec<Vec<bool>> = mask.iter().map(|r| r[..3].to_vec()).collect();
    let fd = synth_factor(xdim, 3, 200, 4.0, Some(&truth), seed).unwrap();
    let mut spec = FactorSpec::new(4);
    spec.mask = Some(mask.clone());
    let mut net = ModelSpec::Factor(spec).build(&fd.data, seed).unwrap();
    let cfg = TrainConfig { max_sweeps: 2000, rel_tol: 1e-7, pattern_search_every: 10, seed };
    train(&mut net, &cfg).unwrap();

    let policy = CascadePolicy::default();
    let mut oracle_err: f64 = 0.0;
    let mut checked = 0;
    for c in vbblocks::structure::candidates(&net) {
        let d = vbblocks::structure::removal_delta(&mut net, c, &policy).unwrap();
        oracle_err = oracle_err.max((d - removal_oracle(&net, c, &policy)).abs());
        checked += 1;
    }
    let mut reports = Vec::new();
    for _ in 0..5 {
        let before = net.total_cost().unwrap();
        let r = prune(&mut net, 0.0, &policy).unwrap();
        if r.is_empty() {
            break;
        }
        let priced: f64 = r.iter().map(|p| p.delta_cost).sum();
        oracle_err = oracle_err.max((net.total_cost().unwrap() - before - priced).abs());
        reports.extend(r);
        train(&mut net, &TrainConfig { max_sweeps: 300, ..cfg.clone() }).unwrap();
    }

    let g = net.graph();
    let mut exact = g.find("s(3)").is_none() && (0..3).all(|j| g.find(&format!("s({j})")).is_some());
    for (i, row) in mask.iter().enumerate() {
        for (j, &m) in row.iter().enumerate() {
            if m && g.find(&format!("A.a({i},{j})")).is_some() != (j < 3) {
                exact = false;
            }
        }
    }
    OccamRun { exact, reports, oracle_err, candidates_checked: checked }
}

/// Each node update and each sweep must not increase the cost.
pub fn check_monotone(seed: u64, sweeps: usize) -> Result<usize, String> {
    let t = 1 + (seed as usize * 7) % 50;
    let g = random_graph(seed, 30, t);
    let mut net = Net::new(g).map_err(|e| e.to_string())?;
    net.initialize(seed);
    let mut updates = 0;
    let mut c = net.total_cost().map_err(|e| e.to_string())?;
    for _ in 0..sweeps {
        let start = c;
        for id in net.update_order().to_vec() {
            net.update_node(id).map_err(|e| format!("update {}: {e}", net.graph().label(id)))?;
            let c2 = net.total_cost().map_err(|e| e.to_string())?;
            if c2 - c > 1e-9 * c.abs().max(1.0) {
                return Err(format!("seed {seed}: update of `{}` raised cost {c} -> {c2}", net.graph().label(id)));
            }
            c = c2;
            updates += 1;
        }
        if c - start > 1e-9 * start.abs().max(1.0) {
            return Err(format!("seed {seed}: sweep raised cost"));
        }
    }
    Ok(updates)
}

/// `s ~ N(μ0, e^{-v0})`, `x_t ~ N(w·s + b, e^{-vx})`.
pub fn conjugate(mu0: f64, v0: f64, w: f64, b: f64, vx: f64, x: &[f64]) -> (Graph, vbblocks::NodeId) {
    let mut g = Graph::new(x.len()).unwrap();
    let cm = g.constant("mu0", mu0).unwrap();
    let cv = g.constant("v0", v0).unwrap();
    let cw = g.constant("w", w).unwrap();
    let cb = g.constant("b", b).unwrap();
    let cx = g.constant("vx", vx).unwrap();
    let s = g.gaussian("s", Arity::Scalar, cm, cv).unwrap();
    let p = g.product("ws", Arity::Scalar, cw, s).unwrap();
    let m = g.sum("ws+b", Arity::Scalar, &[p, cb]).unwrap();
    g.observed("x", x.to_vec(), m, cx).unwrap();
    (g, s)
}

pub fn log_evidence_quadrature(mu0: f64, v0: f64, w: f64, b: f64, vx: f64, x: &[f64]) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let log_joint = |s: f64| {
        let lp = -0.5 * (ln2pi - v0 + v0.exp() * (s - mu0).powi(2));
        lp + x.iter().map(|&xt| -0.5 * (ln2pi - vx + vx.exp() * (xt - w * s - b).powi(2))).sum::<f64>()
    };
    // Peak of the integrand, then integrate the rescaled density.
    let prec = v0.exp() + x.len() as f64 * w * w * vx.exp();
    let mean = (v0.exp() * mu0 + w * vx.exp() * x.iter().map(|xt| xt - b).sum::<f64>()) / prec;
    let peak = log_joint(mean);
    let sd = prec.powf(-0.5);
    let f = |s: f64| (log_joint(s) - peak).exp();
    peak + simpson(&f, mean - 30.0 * sd, mean + 30.0 * sd, 1e-10 * sd).ln()
}


/// One random model whose latent is the log-precision of eight
/// observations. Trains it and returns the final cost and the log evidence
/// by quadrature.
pub fn bound_case(r: &mut ChaCha8Rng) -> (f64, f64) {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let (mu0, v0) = (normal(r), normal(r).abs());
    let x: Vec<f64> = (0..8).map(|_| 1.5 * normal(r)).collect();
    let mut g = Graph::new(x.len()).unwrap();
    let cm = g.constant("mu0", mu0).unwrap();
    let cv = g.constant("v0", v0).unwrap();
    let c0 = g.constant("c0", 0.0).unwrap();
    let s = g.gaussian("s", Arity::Scalar, cm, cv).unwrap();
    g.observed("x", x.clone(), c0, s).unwrap();
    let mut net = Net::new(g).unwrap();
    for _ in 0..50 {
        net.update_all().unwrap();
    }
    let c = net.total_cost().unwrap();
    let log_joint = |s: f64| {
        -0.5 * (ln2pi - v0 + v0.exp() * (s - mu0).powi(2))
            + x.iter().map(|&xt| -0.5 * (ln2pi - s + s.exp() * xt * xt)).sum::<f64>()
    };
    let peak = (0..=40_000).map(|i| log_joint(-20.0 + 1e-3 * i as f64)).fold(f64::NEG_INFINITY, f64::max);
    let le = peak + simpson_pieces(&|s| (log_joint(s) - peak).exp(), -40.0, 40.0, 800, 1e-12).ln();
    (c, le)
}
