mod support;

use support::*;
use vbblocks::models::{
    build_dynsrc, build_dynvar, build_linmap, circular_masks, default_radius, grid_shape, predict_next,
    predictive_perplexity, synth_factor, synth_sequence, DynKind, DynModel, DynSpec, MotionProfile,
    PredictiveGaussian, SynthParams,
};
use vbblocks::{Arity, DataMatrix, Error, Graph, Net, NodeId, NodeKind, ParentRole};

fn const_pair(g: &mut Graph) -> (NodeId, NodeId) {
    (g.constant("c0", 0.0).unwrap(), g.constant("c1", 0.0).unwrap())
}

#[test]
fn linmap_counts() {
    let mut g = Graph::new(3).unwrap();
    let (c0, c1) = const_pair(&mut g);
    let x0 = g.gaussian("x0", Arity::Vector, c0, c1).unwrap();
    let x1 = g.gaussian("x1", Arity::Vector, c0, c1).unwrap();
    let before = g.node_count();
    let h = build_linmap(&mut g, "W", &[x0, x1], 2, None, c0, c1).unwrap();
    assert_eq!(g.node_count() - before, 4 + 4 + 2);
    assert_eq!(h.sums.len(), 2);
    assert!(h.weights.iter().flatten().all(Option::is_some));

    let before = g.node_count();
    let diag = vec![vec![true, false], vec![false, true]];
    let h = build_linmap(&mut g, "D", &[x0, x1], 2, Some(&diag), c0, c1).unwrap();
    assert_eq!(g.node_count() - before, 2 + 2 + 2);
    assert!(h.weights[0][1].is_none() && h.products[1][0].is_none());
    for (i, row) in h.weights.iter().enumerate() {
        for w in row.iter().flatten() {
            let p = h.products[i].iter().flatten().find(|&&p| g.node(p).unwrap().parents.iter().any(|&(_, q)| q == *w));
            let p = *p.expect("weight without product");
            assert!(g.node(h.sums[i]).unwrap().parents.contains(&(ParentRole::Summand, p)));
        }
    }
    let nodes = g.node_count();
    let bad = vec![vec![true, true], vec![false, false]];
    assert!(matches!(build_linmap(&mut g, "E", &[x0, x1], 2, Some(&bad), c0, c1), Err(Error::EmptyRow(1))));
    let short = vec![vec![true]];
    assert!(matches!(build_linmap(&mut g, "F", &[x0, x1], 1, Some(&short), c0, c1), Err(Error::DimensionMismatch { .. })));
    // Masks are checked before anything is created.
    assert_eq!(g.node_count(), nodes);
}

#[test]
fn masks_cover_every_pixel() {
    assert_eq!(grid_shape(64), (8, 8));
    assert_eq!(grid_shape(12), (3, 4));
    assert_eq!(grid_shape(7), (1, 7));
    for (xdim, sdim) in [(64, 4), (256, 30), (16, 4), (7, 3)] {
        let m = circular_masks(xdim, sdim, None);
        assert_eq!(m.len(), xdim);
        assert!(m.iter().all(|r| r.len() == sdim && r.iter().any(|&b| b)));
        for j in 0..sdim {
            assert!(m.iter().any(|r| r[j]), "source {j} of {sdim} has no pixels");
        }
    }
    let (r, c) = grid_shape(64);
    let area = std::f64::consts::PI * default_radius(r, c).powi(2);
    assert!((area / 64.0 - 0.5).abs() < 1e-12);
    // A tiny radius still yields nonempty rows (nearest center).
    let m = circular_masks(64, 4, Some(0.1));
    assert!(m.iter().all(|r| r.iter().filter(|&&b| b).count() == 1));
}

fn toy_data(t: usize, xdim: usize) -> DataMatrix {
    let mut r = rng(1);
    DataMatrix::new(t, xdim, (0..t * xdim).map(|_| normal(&mut r)).collect()).unwrap()
}

#[test]
fn dynamic_builders_validate_and_match_counts() {
    let (xdim, sdim, t) = (4, 2, 10);
    let data = toy_data(t, xdim);
    let mut spec = DynSpec::new(sdim);
    spec.mask = Some(vec![vec![true; sdim]; xdim]);
    let n = xdim * sdim;

    let mut g = Graph::new(t).unwrap();
    let var = build_dynvar(&mut g, &spec, xdim, Some(&data)).unwrap();
    assert!(g.validate().is_ok());
    assert_eq!(g.node_count(), 2 + 8 * sdim + 2 * sdim * sdim + 2 * n + 3 * xdim);
    // u(t) is the variance parent of s(t): the log-normal variance path.
    for j in 0..sdim {
        assert_eq!(g.node(var.s[j]).unwrap().parent(ParentRole::Variance), Some(var.u[j]));
        assert_eq!(g.node(var.u[j]).unwrap().kind, NodeKind::Gaussian);
    }
    let b_inputs: Vec<String> = (0..sdim)
        .flat_map(|j| (0..sdim).map(move |k| (j, k)))
        .map(|(j, k)| {
            let p = var.b.products[j][k].unwrap();
            let q = g.node(p).unwrap().parents.iter().find(|&&(_, q)| g.node(q).unwrap().kind == NodeKind::Proxy).unwrap().1;
            g.label(g.resolve(q))
        })
        .collect();
    assert!(b_inputs.iter().all(|l| l.starts_with("u(")));

    let mut g2 = Graph::new(t).unwrap();
    let src = build_dynsrc(&mut g2, &spec, xdim, Some(&data)).unwrap();
    assert!(g2.validate().is_ok());
    assert_eq!(g2.node_count(), 2 + 7 * sdim + 2 * sdim * sdim + 2 * n + 3 * xdim);
    let b_inputs: Vec<String> = (0..sdim)
        .flat_map(|j| (0..sdim).map(move |k| (j, k)))
        .map(|(j, k)| {
            let p = src.b.products[j][k].unwrap();
            let q = g2.node(p).unwrap().parents.iter().find(|&&(_, q)| g2.node(q).unwrap().kind == NodeKind::Proxy).unwrap().1;
            g2.label(g2.resolve(q))
        })
        .collect();
    assert!(b_inputs.iter().all(|l| l.starts_with("s(")));
    // μ_u is one Gaussian parameter per source, shared across time.
    for j in 0..sdim {
        let mu = g2.node(src.mu_u[j]).unwrap();
        assert_eq!((mu.kind, mu.arity), (NodeKind::Gaussian, Arity::Scalar));
        assert_eq!(g2.node(src.u[j]).unwrap().parent(ParentRole::Mean), Some(src.mu_u[j]));
    }
    assert_eq!(DynModel::locate(&g).unwrap().kind, DynKind::DynVar);
    assert_eq!(DynModel::locate(&g2).unwrap().kind, DynKind::DynSrc);
    assert_eq!(DynModel::locate(&g2).unwrap(), src);

    let bad = toy_data(t, xdim + 1);
    assert!(matches!(build_dynvar(&mut Graph::new(t).unwrap(), &spec, xdim, Some(&bad)), Err(Error::DimensionMismatch { .. })));
}

/// Small model with random posteriors. The B weights and `vu` are nearly
/// deterministic: their uncertainty passes through an exponential, which
/// the moment matching carries only approximately.
fn random_dyn(kind: DynKind, seed: u64, t: usize) -> (Net, DynModel) {
    let (xdim, sdim) = (3, 2);
    let data = toy_data(t, xdim);
    let mut spec = DynSpec::new(sdim);
    spec.init = None;
    let mut g = Graph::new(t).unwrap();
    let m = match kind {
        DynKind::DynVar => build_dynvar(&mut g, &spec, xdim, Some(&data)).unwrap(),
        DynKind::DynSrc => build_dynsrc(&mut g, &spec, xdim, Some(&data)).unwrap(),
    };
    let mut r = rng(seed);
    let mut u01 = move || {
        let z = normal(&mut r);
        (z, 0.5 + 0.5 * z.abs().min(1.5))
    };
    let mut set = |g: &mut Graph, id: NodeId, len: usize, mscale: f64, vscale: f64, offset: f64| {
        for k in 0..len {
            let (z, w) = u01();
            g.set_posterior(id, k, offset + mscale * z, vscale * w).unwrap();
        }
    };
    for &a in m.a.weights.iter().flatten().flatten() {
        set(&mut g, a, 1, 1.0, 0.05, 0.0);
    }
    for &b in m.b.weights.iter().flatten().flatten() {
        set(&mut g, b, 1, 0.5, 1e-8, 0.0);
    }
    for j in 0..sdim {
        set(&mut g, m.s[j], t, 1.0, 0.1, 0.0);
        set(&mut g, m.u[j], t, 0.5, 0.05, 1.0);
        set(&mut g, m.vu[j], 1, 0.2, 1e-8, 2.0);
        if kind == DynKind::DynSrc {
            set(&mut g, m.mu_u[j], 1, 0.3, 0.1, 1.0);
        }
    }
    for &v in &m.vx {
        set(&mut g, v, 1, 0.3, 0.1, 3.0);
    }
    (Net::new(g).unwrap(), m)
}

/// Ancestral sampling of `x(t+1)` from the factorial posterior.
fn mc_predict(net: &Net, m: &DynModel, t: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let st = |id: NodeId, k: usize| {
        let s = net.stats(id);
        if s.len() == 1 { s[0] } else { s[k] }
    };
    let draw = |id: NodeId, k: usize, r: &mut rand_chacha::ChaCha8Rng| {
        let s = st(id, k);
        s.mean + s.var.sqrt() * normal(r)
    };
    let (xdim, sdim) = (m.xdim, m.sdim);
    let mut out = vec![Vec::with_capacity(n); xdim];
    for _ in 0..n {
        let s_now: Vec<f64> = (0..sdim).map(|j| draw(m.s[j], t, &mut r)).collect();
        let mut s_next = vec![0.0; sdim];
        match m.kind {
            DynKind::DynVar => {
                let u_now: Vec<f64> = (0..sdim).map(|j| draw(m.u[j], t, &mut r)).collect();
                for j in 0..sdim {
                    let mu: f64 = (0..sdim).map(|k| draw(m.b.weights[j][k].unwrap(), 0, &mut r) * u_now[k]).sum();
                    let u = mu + (-0.5 * draw(m.vu[j], 0, &mut r)).exp() * normal(&mut r);
                    s_next[j] = s_now[j] + (-0.5 * u).exp() * normal(&mut r);
                }
            }
            DynKind::DynSrc => {
                for j in 0..sdim {
                    let mean: f64 = (0..sdim).map(|k| draw(m.b.weights[j][k].unwrap(), 0, &mut r) * s_now[k]).sum();
                    let u = draw(m.mu_u[j], 0, &mut r) + (-0.5 * draw(m.vu[j], 0, &mut r)).exp() * normal(&mut r);
                    s_next[j] = mean + (-0.5 * u).exp() * normal(&mut r);
                }
            }
        }
        for (i, col) in out.iter_mut().enumerate() {
            let clean: f64 = (0..sdim).filter_map(|j| Some(draw(m.a.weights[i][j]?, 0, &mut r) * s_next[j])).sum();
            col.push(clean + (-0.5 * draw(m.vx[i], 0, &mut r)).exp() * normal(&mut r));
        }
    }
    out
}

#[test]
fn prediction_matches_ancestral_sampling() {
    for (kind, seed) in [(DynKind::DynVar, 3), (DynKind::DynSrc, 4), (DynKind::DynSrc, 5)] {
        let (net, m) = random_dyn(kind, seed, 6);
        for t in [0, 3] {
            let pred = predict_next(&net, &m, t).unwrap();
            let xs = mc_predict(&net, &m, t, 100_000, seed + 10);
            for i in 0..m.xdim {
                let (mm, mse) = mean_se(&xs[i]);
                let (vv, vse) = var_se(&xs[i]);
                assert!((pred.mean[i] - mm).abs() < 3.0 * mse, "{kind:?} t={t} i={i}: mean {} vs {mm}±{mse}", pred.mean[i]);
                assert!((pred.var[i] - vv).abs() < 3.0 * vse, "{kind:?} t={t} i={i}: var {} vs {vv}±{vse}", pred.var[i]);
            }
        }
    }
}

#[test]
fn prediction_range_is_checked() {
    let (net, m) = random_dyn(DynKind::DynVar, 1, 5);
    assert!(predict_next(&net, &m, 3).is_ok());
    assert!(matches!(predict_next(&net, &m, 4), Err(Error::OutOfRange { .. })));
}

#[test]
fn deterministic_posteriors_propagate_exactly() {
    // DynVar, identity A, all variances (numerically) zero, huge innovation
    // log-precision: the prediction is s̄(t) with the observation noise.
    let (xdim, sdim, t) = (2, 2, 4);
    let data = toy_data(t, xdim);
    let mut spec = DynSpec::new(sdim);
    spec.init = None;
    spec.mask = Some(vec![vec![true, false], vec![false, true]]);
    let mut g = Graph::new(t).unwrap();
    let m = build_dynvar(&mut g, &spec, xdim, Some(&data)).unwrap();
    let tiny = 1e-300;
    for j in 0..sdim {
        g.set_posterior(m.a.weights[j][j].unwrap(), 0, 1.0, tiny).unwrap();
        for k in 0..sdim {
            g.set_posterior(m.b.weights[j][k].unwrap(), 0, if j == k { 1.0 } else { 0.0 }, tiny).unwrap();
        }
        for k in 0..t {
            g.set_posterior(m.s[j], k, k as f64 + j as f64, tiny).unwrap();
            g.set_posterior(m.u[j], k, 60.0, tiny).unwrap();
        }
        g.set_posterior(m.vu[j], 0, 0.0, tiny).unwrap();
        g.set_posterior(m.vx[j], 0, 2.0 + j as f64, tiny).unwrap();
    }
    let net = Net::new(g).unwrap();
    let pred = predict_next(&net, &m, 2).unwrap();
    for j in 0..sdim {
        assert!((pred.mean[j] - (2.0 + j as f64)).abs() < 1e-12);
        let expect = (-(2.0 + j as f64)).exp() + (-60.0f64 + 0.5).exp();
        assert!((pred.var[j] - expect).abs() < 1e-12, "{} vs {expect}", pred.var[j]);
    }
}

#[test]
fn clamped_dynsrc_is_a_kalman_prediction_step() {
    // With every weight and variance parameter clamped, the prediction is
    // the linear-Gaussian step N(A B m, A (B P Bᵀ + Q) Aᵀ + R), diagonal.
    let (xdim, sdim, t) = (3, 2, 4);
    let data = toy_data(t, xdim);
    let mut spec = DynSpec::new(sdim);
    spec.init = None;
    spec.mask = Some(vec![vec![true; sdim]; xdim]);
    let mut g = Graph::new(t).unwrap();
    let m = build_dynsrc(&mut g, &spec, xdim, Some(&data)).unwrap();
    let tiny = 1e-300;
    let a = [[0.7, -0.4], [0.2, 1.1], [-0.9, 0.5]];
    let b = [[0.9, 0.3], [-0.2, 0.8]];
    let (sm, sp) = ([0.4, -1.3], [0.2, 0.05]);
    let (mu, rx) = ([1.5, 0.5], [2.0, 3.0, 2.5]);
    for i in 0..xdim {
        for j in 0..sdim {
            g.set_posterior(m.a.weights[i][j].unwrap(), 0, a[i][j], tiny).unwrap();
        }
        g.set_posterior(m.vx[i], 0, rx[i], tiny).unwrap();
    }
    for j in 0..sdim {
        for k in 0..sdim {
            g.set_posterior(m.b.weights[j][k].unwrap(), 0, b[j][k], tiny).unwrap();
        }
        g.set_posterior(m.s[j], 1, sm[j], sp[j]).unwrap();
        g.set_posterior(m.mu_u[j], 0, mu[j], tiny).unwrap();
        g.set_posterior(m.vu[j], 0, 700.0, tiny).unwrap();
    }
    let net = Net::new(g).unwrap();
    let pred = predict_next(&net, &m, 1).unwrap();

    let q: Vec<f64> = mu.iter().map(|&v| (-v as f64).exp()).collect();
    let mut c = [[0.0; 2]; 2];
    for j in 0..sdim {
        for l in 0..sdim {
            c[j][l] = (0..sdim).map(|k| b[j][k] * b[l][k] * sp[k]).sum::<f64>() + if j == l { q[j] } else { 0.0 };
        }
    }
    for i in 0..xdim {
        let mean: f64 = (0..sdim).map(|j| a[i][j] * (0..sdim).map(|k| b[j][k] * sm[k]).sum::<f64>()).sum();
        let var: f64 = (0..sdim).flat_map(|j| (0..sdim).map(move |l| (j, l))).map(|(j, l)| a[i][j] * a[i][l] * c[j][l]).sum::<f64>()
            + (-rx[i] as f64).exp();
        assert!((pred.mean[i] - mean).abs() < 1e-8, "{} vs {mean}", pred.mean[i]);
        assert!((pred.var[i] - var).abs() < 1e-8, "{} vs {var}", pred.var[i]);
    }
}

#[test]
fn perplexity_cases() {
    // Unit-density construction: N(x, 1/(2π)) has log-density 0.
    let x = [0.3, -1.0, 2.5];
    let unit = PredictiveGaussian { mean: x.to_vec(), var: vec![1.0 / (2.0 * std::f64::consts::PI); 3] };
    assert!((predictive_perplexity(&unit, &x).unwrap() - 1.0).abs() < 1e-12);
    // Log-density −1 everywhere: variance e²/(2π) at the mean.
    let v = (2.0f64).exp() / (2.0 * std::f64::consts::PI);
    let e = PredictiveGaussian { mean: x.to_vec(), var: vec![v; 3] };
    assert!((predictive_perplexity(&e, &x).unwrap() - std::f64::consts::E).abs() < 1e-12);

    let mut r = rng(3);
    let n = 9;
    let mean: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let var: Vec<f64> = (0..n).map(|_| 0.1 + normal(&mut r).abs()).collect();
    let xs: Vec<f64> = (0..n).map(|_| 2.0 * normal(&mut r)).collect();
    let pred = PredictiveGaussian { mean: mean.clone(), var: var.clone() };
    let direct: f64 = (0..n)
        .map(|i| {
            let d = statrs::distribution::Normal::new(mean[i], var[i].sqrt()).unwrap();
            statrs::distribution::Continuous::ln_pdf(&d, xs[i])
        })
        .sum::<f64>();
    let p = predictive_perplexity(&pred, &xs).unwrap();
    assert!((p - (-direct / n as f64).exp()).abs() < 1e-12 * p);
    let perm: Vec<usize> = (0..n).rev().collect();
    let shuffled = PredictiveGaussian {
        mean: perm.iter().map(|&i| mean[i]).collect(),
        var: perm.iter().map(|&i| var[i]).collect(),
    };
    let xs2: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
    assert!((predictive_perplexity(&shuffled, &xs2).unwrap() - p).abs() < 1e-12 * p);
    assert!(matches!(predictive_perplexity(&pred, &xs[..3]), Err(Error::DimensionMismatch { .. })));
}

fn increments(s: &DataMatrix, j: usize, range: std::ops::Range<usize>) -> Vec<f64> {
    range.map(|t| s.get(t, j) - if t == 0 { 0.0 } else { s.get(t - 1, j) }).collect()
}

#[test]
fn synthetic_innovations_follow_the_profile() {
    let mut p = SynthParams::new(8, 3, 3000, 5);
    p.profile = MotionProfile::Constant { u: 0.5 };
    let syn = synth_sequence(&p).unwrap();
    for j in 0..3 {
        let (v, _) = var_se(&increments(&syn.s, j, 0..3000));
        assert!((v / (-0.5f64).exp() - 1.0).abs() < 0.1, "source {j}: {v}");
    }
    assert!((0..3000).all(|t| syn.u.get(t, 0) == 0.5));

    p.profile = MotionProfile::Step { before: 1.0, after: -1.0, at: 1500 };
    let syn = synth_sequence(&p).unwrap();
    for j in 0..3 {
        let (v0, se0) = var_se(&increments(&syn.s, j, 0..1500));
        let (v1, se1) = var_se(&increments(&syn.s, j, 1500..3000));
        assert!(v1 - v0 > 5.0 * (se0 + se1), "source {j}: {v0} -> {v1}");
    }
    // Observations are A s(t) plus noise of the requested precision.
    let resid: Vec<f64> = (0..3000)
        .map(|t| syn.data.get(t, 2) - (0..3).map(|j| syn.a.get(2, j) * syn.s.get(t, j)).sum::<f64>())
        .collect();
    let (v, _) = var_se(&resid);
    assert!((v / (-p.noise_logprec).exp() - 1.0).abs() < 0.1);
    for i in 0..8 {
        for j in 0..3 {
            assert_eq!(syn.a.get(i, j) != 0.0, syn.mask[i][j]);
        }
    }
}

#[test]
fn synthetic_data_is_deterministic() {
    let p = SynthParams::new(16, 4, 50, 9);
    assert_eq!(synth_sequence(&p).unwrap(), synth_sequence(&p).unwrap());
    let q = SynthParams { seed: 10, ..p.clone() };
    assert_ne!(synth_sequence(&p).unwrap().data, synth_sequence(&q).unwrap().data);
    assert!(synth_sequence(&SynthParams { tdim: 0, ..p }).is_err());
    assert_eq!(synth_factor(6, 2, 20, 3.0, None, 1).unwrap(), synth_factor(6, 2, 20, 3.0, None, 1).unwrap());
}

#[test]
fn factor_data_respects_its_mask() {
    let mask = vec![vec![true, false], vec![false, true], vec![true, true]];
    let fd = synth_factor(3, 2, 500, 4.0, Some(&mask), 2).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let w = fd.a.get(i, j);
            assert_eq!(w != 0.0, mask[i][j]);
            assert!(w == 0.0 || (0.5..=1.5).contains(&w.abs()));
        }
    }
    let bad_rows = vec![vec![true, true]; 2];
    assert!(matches!(synth_factor(3, 2, 10, 4.0, Some(&bad_rows), 2), Err(Error::DimensionMismatch { .. })));
    let bad_cols = vec![vec![true]; 3];
    assert!(matches!(synth_factor(3, 2, 10, 4.0, Some(&bad_cols), 2), Err(Error::DimensionMismatch { .. })));
}
