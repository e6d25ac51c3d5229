//! Solvers against independently computed reference values.

use mfgaccel::analysis::fit_rate;
use mfgaccel::config::RunConfig;
use mfgaccel::hjb::{self, ControlSet, PhaseGrid};
use mfgaccel::measures::{wasserstein1_1d, wasserstein1_joint, Marginal, ParticleEnsemble};
use mfgaccel::model::{Coupling, FrozenCoupling, Kinetic, LagrangianSpec, Potential, TerminalCost};
use mfgaccel::trajectory::{self, connecting_curve, connecting_residuals, eval_cost};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `P(0)` of the Riccati equation of `min int eps/2 a^2 + 1/2 v^2 + 1/2 x^2`
/// with `x' = v, v' = a`, as `[p_xx, p_xv, p_vv]`, by RK4 backward from 0.
fn riccati_phase(eps: f64, horizon: f64) -> [f64; 3] {
    let rhs = |[p, q, r]: [f64; 3]| [1.0 - q * q / eps, p - q * r / eps, 1.0 + 2.0 * q - r * r / eps];
    let steps = 20_000;
    let h = horizon / steps as f64;
    let mut s = [0.0; 3];
    let add = |s: [f64; 3], k: [f64; 3], c: f64| [s[0] + c * k[0], s[1] + c * k[1], s[2] + c * k[2]];
    for _ in 0..steps {
        let k1 = rhs(s);
        let k2 = rhs(add(s, k1, 0.5 * h));
        let k3 = rhs(add(s, k2, 0.5 * h));
        let k4 = rhs(add(s, k3, h));
        for i in 0..3 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    s
}

#[test]
fn lq_value_functions_match_riccati() {
    let cfg = RunConfig::from_json(
        r#"{"model": {"coupling": "none", "kappa_c": 0},
            "grid": {"r_x": 2, "r_v": 2, "n_x": 201, "n_v": 201, "n_t": 51, "a_max": 3, "n_b": 401}}"#,
    )
    .unwrap();
    let p = cfg.problem().unwrap();
    let eps = 0.1;
    let none = FrozenCoupling::none();
    let u = hjb::solve_hjb_acceleration(&p.grid, &p.spec, &none, &p.terminal, eps, &p.acceleration_controls(eps).unwrap())
        .unwrap();
    let u0 = hjb::solve_hjb_limit_classical(&p.grid, &p.spec, &none, &p.terminal, &p.velocity_controls).unwrap();
    let [pxx, pxv, pvv] = riccati_phase(eps, 1.0);
    let k = 1f64.tanh();
    for x in [-0.5, 0.0, 0.5] {
        for v in [-0.5, 0.0, 0.5] {
            let exact = 0.5 * (pxx * x * x + 2.0 * pxv * x * v + pvv * v * v);
            let got = u.interp(0.0, x, v);
            assert!((got - exact).abs() <= 0.04 * exact.max(0.05), "({x}, {v}): {got} vs {exact}");
        }
        let exact = 0.5 * k * x * x;
        let got = u0.interp(0.0, x, 0.0);
        assert!((got - exact).abs() <= 0.02 * exact.max(0.05), "limit at {x}: {got} vs {exact}");
    }
}

#[test]
fn scheme_error_shrinks_under_refinement() {
    // first-order convergence: each halving moves the probe values less
    // than the previous one did
    let spec = LagrangianSpec::quadratic(1.0, Coupling::NONE, 10.0);
    let none = FrozenCoupling::none();
    let eps = 0.2;
    let mut grid = PhaseGrid::new(1.0, 11, 2.0, 21, 2.0, 21).unwrap();
    let mut last: Option<Vec<f64>> = None;
    let mut last_delta = f64::INFINITY;
    for _ in 0..3 {
        let ctl = ControlSet::acceleration(21, 3.0, eps).unwrap();
        let u = hjb::solve_hjb_acceleration(&grid, &spec, &none, &TerminalCost::ZERO, eps, &ctl).unwrap();
        let probes: Vec<f64> = [(-0.4, 0.4), (0.0, 0.4), (0.4, 0.0), (0.4, 0.4)]
            .iter()
            .map(|&(x, v)| u.interp(0.0, x, v))
            .collect();
        if let Some(prev) = &last {
            let delta = prev.iter().zip(&probes).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(delta < last_delta, "{delta} after {last_delta}");
            last_delta = delta;
        }
        last = Some(probes);
        grid = grid.refined();
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Optimal cost between uniform measures on `n` atoms each: the optimum of
/// the assignment LP is attained at a permutation matrix.
fn brute_uniform(n: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Optimal cost by enumerating every basic solution of the transportation
/// LP: spanning trees of the bipartite graph with flows fixed by the
/// marginals.
fn brute_basic(a: &[f64], b: &[f64], cost: impl Fn(usize, usize) -> f64) -> f64 {
    let (n, m) = (a.len(), b.len());
    let arcs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let k = n + m - 1;
    let mut best = f64::INFINITY;
    let mut pick = (0..k).collect::<Vec<usize>>();
    loop {
        if let Some(flow) = tree_flow(a, b, &pick.iter().map(|&e| arcs[e]).collect::<Vec<_>>()) {
            if flow.iter().all(|&(_, f)| f >= -1e-12) {
                best = best.min(flow.iter().map(|&((i, j), f)| f * cost(i, j)).sum());
            }
        }
        // next k-subset in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < arcs.len() - k + i {
                break;
            }
        }
        pick[i] += 1;
        for j in i + 1..k {
            pick[j] = pick[j - 1] + 1;
        }
    }
}

/// Flows on a candidate tree by repeatedly settling leaves; `None` if the
/// arcs do not form a spanning tree.
fn tree_flow(a: &[f64], b: &[f64], arcs: &[(usize, usize)]) -> Option<Vec<((usize, usize), f64)>> {
    let n = a.len();
    let mut rest: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut live = vec![true; arcs.len()];
    let mut out = Vec::new();
    for _ in 0..arcs.len() {
        let mut deg = vec![0usize; rest.len()];
        for (e, &(i, j)) in arcs.iter().enumerate() {
            if live[e] {
                deg[i] += 1;
                deg[n + j] += 1;
            }
        }
        let (e, leaf) = arcs.iter().enumerate().find_map(|(e, &(i, j))| {
            if !live[e] {
                None
            } else if deg[i] == 1 {
                Some((e, i))
            } else if deg[n + j] == 1 {
                Some((e, n + j))
            } else {
                None
            }
        })?;
        let (i, j) = arcs[e];
        let f = rest[leaf];
        rest[i] -= f;
        rest[n + j] -= f;
        live[e] = false;
        out.push(((i, j), f));
    }
    rest.iter().all(|r| r.abs() < 1e-12).then_some(out)
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

#[test]
fn transport_distances_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for case in 0..30 {
        let (n, m) = if case % 2 == 0 { (rng.gen_range(1..=3), rng.gen_range(1..=3)) } else { (7, 7) };
        let pts = |rng: &mut ChaCha8Rng, k: usize| -> Vec<(f64, f64)> {
            (0..k).map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect()
        };
        let (p, q) = (pts(&mut rng, n), pts(&mut rng, m));
        let (a, b) = if n == m && case % 2 == 1 {
            (vec![1.0 / n as f64; n], vec![1.0 / m as f64; m])
        } else {
            (random_weights(&mut rng, n), random_weights(&mut rng, m))
        };
        let ens = |pts: &[(f64, f64)], w: &[f64]| {
            ParticleEnsemble::new(pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect(), w.to_vec())
                .unwrap()
        };
        let joint_cost = |i: usize, j: usize| (p[i].0 - q[j].0).abs() + (p[i].1 - q[j].1).abs();
        let line_cost = |i: usize, j: usize| (p[i].0 - q[j].0).abs();
        let (want_joint, want_line) = if case % 2 == 1 {
            (brute_uniform(n, joint_cost), brute_uniform(n, line_cost))
        } else {
            (brute_basic(&a, &b, joint_cost), brute_basic(&a, &b, line_cost))
        };
        let joint = wasserstein1_joint(&ens(&p, &a), &ens(&q, &b)).unwrap();
        assert!(!joint.approximate);
        assert!((joint.value - want_joint).abs() < 1e-10, "case {case}: {} vs {want_joint}", joint.value);
        let line = wasserstein1_1d(
            &Marginal::new(p.iter().map(|p| p.0).collect(), a.clone()).unwrap(),
            &Marginal::new(q.iter().map(|p| p.0).collect(), b.clone()).unwrap(),
        )
        .unwrap();
        assert!((line - want_line).abs() < 1e-10, "case {case}: {line} vs {want_line}");
    }
}

/// `-eps x'''' + x'' = c` with `x(0) = x0`, `x'(0) = v0`, `x''(T) = 0` and
/// `-eps x'''(T) + x'(T) + s = 0`: exponentials plus a quadratic.
fn linear_force_solution(eps: f64, t_final: f64, x0: f64, v0: f64, c: f64, s: f64) -> impl Fn(f64) -> f64 {
    let r = eps.sqrt();
    let b = -c * t_final - s;
    let (e, ei) = ((t_final / r).exp(), (-t_final / r).exp());
    // C - D = r (v0 - b) and C e + D / e = -c r^2
    let dd = (-c * r * r - r * (v0 - b) * e) / (e + ei);
    let cc = dd + r * (v0 - b);
    let a = x0 - cc - dd;
    move |t: f64| a + b * t + cc * (t / r).exp() + dd * (-t / r).exp() + 0.5 * c * t * t
}

#[test]
fn euler_lagrange_solution_matches_closed_form() {
    let (c, slope) = (0.7, -0.4);
    let spec = LagrangianSpec {
        kinetic: Kinetic::HALF_SQUARE,
        potential: Potential::Linear { slope: c },
        offset: 0.0,
        coupling: Coupling::NONE,
        m0: 10.0,
        theta_bound: 0.0,
    };
    let g = TerminalCost::linear(slope);
    let none = FrozenCoupling::none();
    for eps in [0.05, 0.1] {
        let exact = linear_force_solution(eps, 1.0, 0.3, -0.2, c, slope);
        let mut errors = Vec::new();
        for m in [201, 401, 801] {
            let bvp = trajectory::solve_el_bvp(eps, 0.0, 1.0, 0.3, -0.2, &spec, &none, &g, m).unwrap();
            assert!(bvp.converged);
            let err = (0..m).fold(0.0f64, |e, i| e.max((bvp.curve.gamma[i] - exact(bvp.curve.time(i))).abs()));
            errors.push(err);
        }
        // the discrete natural boundary conditions are first order in h
        assert!(errors[2] < 1e-4, "eps {eps}: {errors:?}");
        assert!(errors[0] / errors[1] > 1.8 && errors[1] / errors[2] > 1.8, "eps {eps}: {errors:?}");
        let bvp = trajectory::solve_el_bvp(eps, 0.0, 1.0, 0.3, -0.2, &spec, &none, &g, 401).unwrap();
        let direct = trajectory::minimize_direct(eps, 0.0, 1.0, 0.3, -0.2, &spec, &none, &g, 401).unwrap();
        assert!(direct.converged);
        assert!((bvp.cost - direct.cost).abs() < 1e-8);
    }
}

#[test]
fn connecting_curve_cost_scales_like_sqrt_eps() {
    let spec = LagrangianSpec::quadratic(0.0, Coupling::NONE, 10.0);
    let none = FrozenCoupling::none();
    let ladder = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01];
    let mut costs = Vec::new();
    for &eps in &ladder {
        assert!(connecting_residuals(0.2, 1.0, -0.5, eps).iter().all(|r| r.abs() < 1e-12));
        let curve = connecting_curve(0.2, 1.0, -0.5, eps, 2001).unwrap();
        costs.push(eval_cost(&curve, eps, &spec, &none, &TerminalCost::ZERO));
    }
    let fit = fit_rate(&ladder, &costs).unwrap();
    assert!((fit.slope - 0.5).abs() < 0.02, "{fit:?}");
}

#[test]
fn limit_feedback_matches_riccati() {
    // the velocities attached to the limit flow follow b = -tanh(T - t) x
    let cfg = RunConfig::from_json(
        r#"{"model": {"coupling": "none", "kappa_c": 0},
            "grid": {"r_x": 2, "r_v": 2, "n_x": 401, "n_t": 101, "n_b": 801},
            "measure": {"particles": 100}}"#,
    )
    .unwrap();
    let p = cfg.problem().unwrap();
    let sol = mfgaccel::mfg::solve_mfg_of_control(&p).unwrap();
    for (k, e) in sol.flow.ensembles.iter().enumerate().skip(1).step_by(10) {
        let t = sol.flow.times[k];
        for (x, b, _) in e.iter() {
            let want = -(1.0 - t).tanh() * x;
            assert!((b - want).abs() <= 0.01 * want.abs().max(0.1), "t {t} x {x}: {b} vs {want}");
        }
    }
}
