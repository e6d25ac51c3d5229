//! The penalty sweep: solve the limit system once, then the penalized system
//! down a ladder of `eps`, and tabulate how far apart the two are together
//! with the a priori estimates measured on each solution.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::hjb::{self, ValueField};
use crate::io::fmt_f64;
use crate::measures::{trapezoid, wasserstein1_joint, JointDistance, MeasureFlow};
use crate::mfg::{self, MFGSolution, Problem, SolutionKind};
use crate::trajectory::Curve;
use crate::{Error, Result};

/// Values clipped to this before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-15;
/// Start of the window for the acceleration energy.
pub const ACCEL_DELTA: f64 = 0.1;
/// Envelope slack tolerated as round-off.
pub const ENVELOPE_TOL: f64 = 1e-9;

pub const REPORT_HEADER: &str = "eps,sup_u_gap,sup_d1_marginal,sup_d1_joint,osc_v,lemma41_ok,cor42_margin,cor43_margin,prop46_margin,prop52_value,iters,converged";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub ladder: Vec<f64>,
    pub probes: Vec<[f64; 3]>,
    /// Half-width of the evaluation box in `x` and `v`.
    pub r: f64,
    pub limit: SolutionKind,
    /// `(eps, max_iter)` pairs replacing the Picard budget on single rungs.
    pub overrides: Vec<(f64, usize)>,
    pub refinement: bool,
}

impl SweepPlan {
    pub fn new(ladder: Vec<f64>, probes: Vec<[f64; 3]>, r: f64, limit: SolutionKind) -> Result<Self> {
        if ladder.is_empty() {
            return Err(Error::config("empty eps ladder"));
        }
        if ladder.iter().any(|&e| !(e > 0.0 && e.is_finite())) || ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("the eps ladder must be positive and strictly decreasing"));
        }
        if !(r > 0.0) {
            return Err(Error::config("the evaluation box must have positive size"));
        }
        if limit == SolutionKind::EpsSystem {
            return Err(Error::config("the comparison target must be a limit system"));
        }
        Ok(SweepPlan {
            ladder,
            probes,
            r,
            limit,
            overrides: Vec::new(),
            refinement: true,
        })
    }

    /// Times at which the joint distance is measured.
    pub fn probe_times(t_final: f64) -> [f64; 5] {
        [0.0, 0.25, 0.5, 0.75, 1.0].map(|s| s * t_final)
    }
}

/// Margins of the a priori estimates on one solution; negative means
/// violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateAudit {
    /// Slack of the value envelope over the whole grid.
    pub lemma41_margin: f64,
    pub lemma41_ok: bool,
    /// `min_i Q1(v_i) - int_0^T |v_i|^2`.
    pub cor42_margin: f64,
    /// `min_{s,t} Q2 sqrt|t - s| - d1(m_s, m_t)`.
    pub cor43_margin: f64,
    /// `min (M0 (T + Q1(v)) + |Dg|) - |D_x u|` on the evaluation box.
    pub prop46_margin: f64,
    /// `max_i int_delta^T |dv_i/dt|^2`.
    pub prop52_value: f64,
}

/// `Q1 (1 + v^2)`: the energy bound of an optimal path started at velocity
/// `v`.
fn energy_bound(env: &hjb::Envelope, v: f64) -> f64 {
    2.0 * env.m0 * (env.g_sup + env.m0 * env.t_final * (1.0 + v * v))
}

fn terminal_values(field: &ValueField) -> Vec<f64> {
    let k = field.t.n - 1;
    (0..field.x.n).map(|i| field.get(k, i, 0)).collect()
}

fn box_nodes(axis: crate::Axis, r: f64) -> Vec<usize> {
    (0..axis.n).filter(|&i| axis.node(i).abs() <= r + 1e-12).collect()
}

/// Measure every estimate on a penalized solution.
pub fn audit_estimates(sol: &MFGSolution, problem: &Problem, r: f64) -> Result<EstimateAudit> {
    let u = &sol.value;
    let va = u
        .v
        .ok_or_else(|| Error::invalid("estimate audit needs a phase-space value function"))?;
    let t_final = problem.grid.t_final();
    let env = hjb::envelope(&problem.spec, &problem.terminal, &terminal_values(u), u.x, t_final);
    let lemma41_margin = env.margin(u);

    let flow = &sol.flow;
    let mu0 = flow.first();
    let h = u.t.step();
    let mut cor42 = f64::INFINITY;
    let mut prop52: f64 = 0.0;
    let first_late = (0..flow.len()).find(|&k| flow.times[k] >= ACCEL_DELTA - 1e-12);
    for p in 0..mu0.len() {
        let vel: Vec<f64> = flow.ensembles.iter().map(|e| e.velocities[p]).collect();
        let sq: Vec<f64> = vel.iter().map(|v| v * v).collect();
        cor42 = cor42.min(energy_bound(&env, mu0.velocities[p]) - trapezoid(&sq, h));
        if let Some(k0) = first_late {
            if k0 + 1 < vel.len() {
                let acc = Curve::new(flow.times[0], t_final, vel)?.velocity();
                let sq: Vec<f64> = acc[k0..].iter().map(|a| a * a).collect();
                prop52 = prop52.max(trapezoid(&sq, h));
            }
        }
    }

    let q2 = mu0
        .iter()
        .map(|(_, v, w)| w * energy_bound(&env, v))
        .sum::<f64>()
        .sqrt();
    let marg = flow.sorted_marginals();
    let mut cor43 = f64::INFINITY;
    for a in 0..marg.len() {
        for b in a + 1..marg.len() {
            let d = marg[a].distance(&marg[b]);
            cor43 = cor43.min(q2 * (flow.times[b] - flow.times[a]).sqrt() - d);
        }
    }

    let dx = u.gradient_x();
    let (xs, vs) = (box_nodes(u.x, r), box_nodes(va, r));
    let mut prop46 = f64::INFINITY;
    for k in 0..u.t.n {
        for &i in &xs {
            for &j in &vs {
                let v = va.node(j);
                let bound = env.m0 * (t_final + energy_bound(&env, v)) + env.dg;
                prop46 = prop46.min(bound - dx.get(k, i, j).abs());
            }
        }
    }

    Ok(EstimateAudit {
        lemma41_margin,
        lemma41_ok: lemma41_margin >= -ENVELOPE_TOL * env.upper(va.max).max(1.0),
        cor42_margin: cor42,
        cor43_margin: if marg.len() > 1 { cor43 } else { 0.0 },
        prop46_margin: prop46,
        prop52_value: prop52,
    })
}

/// `sup_{t, |v| <= r, |x| <= r} (max_v u - min_v u)`.
pub fn osc_v(u: &ValueField, r: f64) -> Result<f64> {
    let va = u.v.ok_or_else(|| Error::invalid("oscillation in v needs a phase-space field"))?;
    let (xs, vs) = (box_nodes(u.x, r), box_nodes(va, r));
    let mut worst: f64 = 0.0;
    for k in 0..u.t.n {
        for &i in &xs {
            let (lo, hi) = vs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &j| {
                let w = u.get(k, i, j);
                (lo.min(w), hi.max(w))
            });
            worst = worst.max(hi - lo);
        }
    }
    Ok(worst)
}

/// `sup |u_eps(t, x, v) - u0(t, x)|` over grid nodes with `|x|, |v| <= r`.
pub fn sup_gap(u_eps: &ValueField, u0: &ValueField, r: f64) -> Result<f64> {
    let va = u_eps.v.ok_or_else(|| Error::invalid("gap needs a phase-space field"))?;
    if u0.v.is_some() || u0.t != u_eps.t || u0.x != u_eps.x {
        return Err(Error::invalid("gap needs a limit field on the same (t, x) grid"));
    }
    let (xs, vs) = (box_nodes(u_eps.x, r), box_nodes(va, r));
    let mut worst: f64 = 0.0;
    for k in 0..u_eps.t.n {
        for &i in &xs {
            let base = u0.get(k, i, 0);
            for &j in &vs {
                worst = worst.max((u_eps.get(k, i, j) - base).abs());
            }
        }
    }
    Ok(worst)
}

/// `sup |u_coarse - u_fine|` on the coarse nodes inside the box, where
/// `fine` lives on the grid with every spacing halved.
fn refinement_delta(coarse: &ValueField, fine: &ValueField, r: f64) -> f64 {
    let (xs, vs) = match coarse.v {
        Some(va) => (box_nodes(coarse.x, r), box_nodes(va, r)),
        None => (box_nodes(coarse.x, r), vec![0]),
    };
    let mut worst: f64 = 0.0;
    for k in 0..coarse.t.n {
        for &i in &xs {
            for &j in &vs {
                worst = worst.max((coarse.get(k, i, j) - fine.get(2 * k, 2 * i, 2 * j)).abs());
            }
        }
    }
    worst
}

/// Joint d1 between the two flows at the nodes nearest to `times`.
pub fn compare_joint_reconstruction(
    eps_flow: &MeasureFlow,
    limit_flow: &MeasureFlow,
    times: &[f64],
) -> Result<Vec<(f64, JointDistance)>> {
    times
        .iter()
        .map(|&t| Ok((t, wasserstein1_joint(eps_flow.at(t), limit_flow.at(t))?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    /// Number of values raised to [`LOG_FLOOR`].
    pub clipped: usize,
}

/// Least squares line through `(log x, log y)`.
pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("fit_rate needs matching lengths"));
    }
    if xs.len() < 3 {
        return Err(Error::invalid(format!("fit_rate needs at least 3 points, got {}", xs.len())));
    }
    if xs.iter().any(|&x| !(x > 0.0)) || ys.iter().any(|&y| !(y >= 0.0)) {
        return Err(Error::invalid("fit_rate needs positive abscissae and nonnegative values"));
    }
    let clipped = ys.iter().filter(|&&y| y < LOG_FLOOR).count();
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.max(LOG_FLOOR).ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("fit_rate needs at least two distinct abscissae"));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r2,
        points: xs.len(),
        clipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub eps: f64,
    pub sup_u_gap: f64,
    pub sup_d1_marginal: f64,
    pub sup_d1_joint: f64,
    /// `(t, d1(mu_eps_t, mu0_t))` at the probe times.
    pub joint_at_probes: Vec<(f64, f64)>,
    /// The joint distance fell back to the sliced approximation.
    pub joint_approximate: bool,
    pub osc_v: f64,
    pub audit: Option<EstimateAudit>,
    pub iters: usize,
    pub converged: bool,
    /// Why the row is flagged, if it is.
    pub flag: Option<String>,
}

impl ReportRow {
    fn failed(eps: f64, reason: String) -> Self {
        ReportRow {
            eps,
            sup_u_gap: f64::NAN,
            sup_d1_marginal: f64::NAN,
            sup_d1_joint: f64::NAN,
            joint_at_probes: Vec::new(),
            joint_approximate: false,
            osc_v: f64::NAN,
            audit: None,
            iters: 0,
            converged: false,
            flag: Some(reason),
        }
    }

    pub fn flagged(&self) -> bool {
        self.flag.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeValue {
    pub eps: f64,
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub u_eps: f64,
    pub u0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub limit: SolutionKind,
    pub limit_iterations: usize,
    pub limit_converged: bool,
    pub rows: Vec<ReportRow>,
    pub probes: Vec<ProbeValue>,
    /// Change of the value functions when the grid spacing is halved, at the
    /// smallest penalty: `max(delta_eps, delta_limit)`.
    pub refinement_delta: Option<f64>,
    pub rates: BTreeMap<String, RateFit>,
}

impl ConvergenceReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let a = r.audit;
            let m = |f: fn(&EstimateAudit) -> f64| a.as_ref().map_or(f64::NAN, f);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(r.eps),
                fmt_f64(r.sup_u_gap),
                fmt_f64(r.sup_d1_marginal),
                fmt_f64(r.sup_d1_joint),
                fmt_f64(r.osc_v),
                a.is_some_and(|a| a.lemma41_ok),
                fmt_f64(m(|a| a.cor42_margin)),
                fmt_f64(m(|a| a.cor43_margin)),
                fmt_f64(m(|a| a.prop46_margin)),
                fmt_f64(m(|a| a.prop52_value)),
                r.iters,
                r.converged
            );
        }
        out
    }

    pub fn probes_csv(&self) -> String {
        let rows: Vec<Vec<f64>> = self
            .probes
            .iter()
            .map(|p| vec![p.eps, p.t, p.x, p.v, p.u_eps, p.u0])
            .collect();
        crate::io::table_csv("eps,t,x,v,u_eps,u0", &rows)
    }

    /// Slopes, refinement floor and flagged rows.
    pub fn rates_json(&self) -> serde_json::Value {
        let flagged: Vec<_> = self
            .rows
            .iter()
            .filter_map(|r| r.flag.as_ref().map(|f| serde_json::json!({ "eps": r.eps, "reason": f })))
            .collect();
        serde_json::json!({
            "limit": self.limit,
            "limit_iterations": self.limit_iterations,
            "limit_converged": self.limit_converged,
            "refinement_delta": self.refinement_delta,
            "rates": self.rates,
            "flagged": flagged,
        })
    }
}

fn row_for(sol: &MFGSolution, limit: &MFGSolution, problem: &Problem, plan: &SweepPlan) -> Result<ReportRow> {
    let joint = compare_joint_reconstruction(
        &sol.flow,
        &limit.flow,
        &SweepPlan::probe_times(problem.grid.t_final()),
    )?;
    Ok(ReportRow {
        eps: sol.eps,
        sup_u_gap: sup_gap(&sol.value, &limit.value, plan.r)?,
        sup_d1_marginal: sol.flow.sup_marginal_distance(&limit.flow)?,
        sup_d1_joint: joint.iter().fold(0.0, |m, (_, d)| m.max(d.value)),
        joint_at_probes: joint.iter().map(|(t, d)| (*t, d.value)).collect(),
        joint_approximate: joint.iter().any(|(_, d)| d.approximate),
        osc_v: osc_v(&sol.value, plan.r)?,
        audit: Some(audit_estimates(sol, problem, plan.r)?),
        iters: sol.iterations,
        converged: sol.converged,
        flag: (!sol.converged).then(|| format!("no fixed point after {} iterations", sol.iterations)),
    })
}

/// Re-solve both HJB equations on the refined grid with the final flows
/// frozen and report the larger change.
fn measure_refinement(problem: &Problem, sol: &MFGSolution, limit: &MFGSolution, r: f64) -> Result<f64> {
    let fine = problem.refined();
    let coupling = problem.freeze(&sol.flow);
    let controls = fine.acceleration_controls(sol.eps)?;
    let u_fine = hjb::solve_hjb_acceleration(&fine.grid, &fine.spec, &coupling, &fine.terminal, sol.eps, &controls)?;
    let lim_coupling = problem.freeze(&limit.flow);
    let u0_fine = match limit.kind {
        SolutionKind::MfgOfControl => {
            hjb::solve_hjb_mfg_control(&fine.grid, &fine.spec, &lim_coupling, &fine.terminal, &fine.velocity_controls)?
        }
        _ => hjb::solve_hjb_limit_classical(&fine.grid, &fine.spec, &lim_coupling, &fine.terminal, &fine.velocity_controls)?,
    };
    Ok(refinement_delta(&sol.value, &u_fine, r).max(refinement_delta(&limit.value, &u0_fine, r)))
}

/// Solve the limit once and every rung of the ladder; failed or
/// non-converged rungs are flagged and the sweep continues.
pub fn run_sweep(problem: &Problem, plan: &SweepPlan) -> Result<ConvergenceReport> {
    let limit = mfg::solve_limit(problem, plan.limit)?;
    let mut rows = Vec::with_capacity(plan.ladder.len());
    let mut probes = Vec::new();
    let mut last = None;
    for &eps in &plan.ladder {
        let mut rung = problem.clone();
        if let Some(&(_, it)) = plan.overrides.iter().find(|(e, _)| (e - eps).abs() <= 1e-12 * eps) {
            rung.solver.max_iter = it;
        }
        let sol = match mfg::solve_eps_system(&rung, eps) {
            Ok(sol) => sol,
            Err(e) => {
                rows.push(ReportRow::failed(eps, e.to_string()));
                continue;
            }
        };
        match row_for(&sol, &limit, problem, plan) {
            Ok(row) => rows.push(row),
            Err(e) => rows.push(ReportRow::failed(eps, e.to_string())),
        }
        for &[t, x, v] in &plan.probes {
            probes.push(ProbeValue {
                eps,
                t,
                x,
                v,
                u_eps: sol.value.interp(t, x, v),
                u0: limit.value.interp(t, x, 0.0),
            });
        }
        if eps == plan.ladder[plan.ladder.len() - 1] {
            last = Some(sol);
        }
    }

    let refinement_delta = match (&last, plan.refinement) {
        (Some(sol), true) => Some(measure_refinement(problem, sol, &limit, plan.r)?),
        _ => None,
    };

    let good: Vec<&ReportRow> = rows.iter().filter(|r| !r.flagged()).collect();
    let eps: Vec<f64> = good.iter().map(|r| r.eps).collect();
    let mut rates = BTreeMap::new();
    type Column = (&'static str, fn(&ReportRow) -> f64);
    let columns: [Column; 4] = [
        ("sup_u_gap", |r| r.sup_u_gap),
        ("sup_d1_marginal", |r| r.sup_d1_marginal),
        ("sup_d1_joint", |r| r.sup_d1_joint),
        ("osc_v", |r| r.osc_v),
    ];
    for (name, col) in columns {
        let ys: Vec<f64> = good.iter().map(|r| col(r)).collect();
        if let Ok(fit) = fit_rate(&eps, &ys) {
            rates.insert(name.to_string(), fit);
        }
    }

    Ok(ConvergenceReport {
        limit: limit.kind,
        limit_iterations: limit.iterations,
        limit_converged: limit.converged,
        rows,
        probes,
        refinement_delta,
        rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    #[test]
    fn fit_rate_examples() {
        let xs = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01];
        let lin = fit_rate(&xs, &xs).unwrap();
        assert!((lin.slope - 1.0).abs() < 1e-10 && (lin.r2 - 1.0).abs() < 1e-12);
        let sq: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
        assert!((fit_rate(&xs, &sq).unwrap().slope - 0.5).abs() < 1e-10);
        assert!(matches!(fit_rate(&xs[..2], &xs[..2]), Err(Error::InvalidInput(_))));
        let zeros = fit_rate(&xs, &[1.0, 0.5, 0.0, 0.1, 0.0, 0.01]).unwrap();
        assert_eq!(zeros.clipped, 2);
    }

    #[test]
    fn plan_validation() {
        assert!(SweepPlan::new(vec![0.5, 0.1], vec![], 2.0, SolutionKind::ClassicalLimit).is_ok());
        assert!(SweepPlan::new(vec![0.1, 0.5], vec![], 2.0, SolutionKind::ClassicalLimit).is_err());
        assert!(SweepPlan::new(vec![0.5, 0.5], vec![], 2.0, SolutionKind::ClassicalLimit).is_err());
        assert!(SweepPlan::new(vec![0.5, -0.1], vec![], 2.0, SolutionKind::ClassicalLimit).is_err());
        assert!(SweepPlan::new(vec![0.5], vec![], 2.0, SolutionKind::EpsSystem).is_err());
    }

    #[test]
    fn gap_and_oscillation_on_known_fields() {
        let (t, x, v) = (Axis::new(0.0, 1.0, 3), Axis::symmetric(3.0, 7), Axis::symmetric(3.0, 7));
        let mut vals = Vec::new();
        for _ in 0..t.n {
            for _ in 0..x.n {
                for j in 0..v.n {
                    vals.push(v.node(j).powi(2));
                }
            }
        }
        let u = ValueField::phase(t, x, v, 0.1, vals);
        // box |v| <= 2 holds nodes -2..2
        assert_eq!(osc_v(&u, 2.0).unwrap(), 4.0);
        let u0 = ValueField::limit(t, x, 0.0, vec![1.0; t.n * x.n]);
        assert_eq!(sup_gap(&u, &u0, 2.0).unwrap(), 3.0);
        assert_eq!(sup_gap(&u, &u0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn report_csv_has_exact_header() {
        let report = ConvergenceReport {
            limit: SolutionKind::ClassicalLimit,
            limit_iterations: 1,
            limit_converged: true,
            rows: vec![ReportRow::failed(0.1, "boom".into())],
            probes: vec![],
            refinement_delta: None,
            rates: BTreeMap::new(),
        };
        let csv = report.csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 12);
        assert_eq!(row[5], "false");
        assert_eq!(row[11], "false");
    }
}
