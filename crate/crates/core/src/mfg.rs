//! Damped Picard iterations coupling the HJB solvers with particle
//! transport, for the penalized system and both limit systems.
//!
//! Every iterate of the measure flow is a push-forward of the same initial
//! atoms, so damping mixes particle paths (`(1 - lambda) old + lambda new`)
//! instead of densities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Axis;
use crate::hjb::{self, ControlSet, PhaseGrid, ValueField};
use crate::measures::{MeasureFlow, ParticleEnsemble};
use crate::model::{optimal_velocity_field, CouplingKind, FrozenCoupling, LagrangianSpec, TerminalCost};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Damping of the Picard update.
    pub lambda: f64,
    /// Stop when the flow moves less than this in sup-in-time d1.
    pub tol_fp: f64,
    pub max_iter: usize,
    /// Transport sub-steps are at most `inner_step * eps` long.
    pub inner_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            lambda: 0.5,
            tol_fp: 1e-3,
            max_iter: 60,
            inner_step: 0.25,
        }
    }
}

/// Everything a solve needs besides the penalty.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: LagrangianSpec,
    pub terminal: TerminalCost,
    pub grid: PhaseGrid,
    /// Number of acceleration controls.
    pub n_a: usize,
    /// Acceleration reach at `eps = 1`.
    pub a_max: f64,
    pub velocity_controls: ControlSet,
    pub mu0: ParticleEnsemble,
    pub solver: SolverOptions,
}

impl Problem {
    pub fn acceleration_controls(&self, eps: f64) -> Result<ControlSet> {
        ControlSet::acceleration(self.n_a, self.a_max, eps)
    }

    /// Both costs ignore the population.
    pub fn is_decoupled(&self) -> bool {
        self.spec.is_decoupled() && !self.terminal.depends_on_measure()
    }

    pub fn profile_axis(&self) -> Axis {
        FrozenCoupling::profile_axis(self.grid.x, self.spec.coupling.sigma.min(self.terminal.sigma))
    }

    pub fn freeze(&self, flow: &MeasureFlow) -> FrozenCoupling {
        if self.is_decoupled() {
            return FrozenCoupling::none();
        }
        FrozenCoupling::from_flow(&self.spec, &self.terminal, flow, self.profile_axis())
    }

    /// The same problem on a grid with every spacing halved.
    pub fn refined(&self) -> Problem {
        Problem {
            grid: self.grid.refined(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    EpsSystem,
    ClassicalLimit,
    MfgOfControl,
}

#[derive(Debug, Clone)]
pub struct MFGSolution {
    pub kind: SolutionKind,
    pub eps: f64,
    pub value: ValueField,
    pub flow: MeasureFlow,
    pub iterations: usize,
    pub fixed_point_gap: f64,
    pub gap_history: Vec<f64>,
    pub converged: bool,
}

/// `x + v t` with constant velocities.
pub fn free_flow(mu0: &ParticleEnsemble, times: &Axis) -> MeasureFlow {
    let t0 = times.min;
    let ensembles = times
        .nodes()
        .iter()
        .map(|&t| ParticleEnsemble {
            positions: mu0.iter().map(|(x, v, _)| x + v * (t - t0)).collect(),
            velocities: mu0.velocities.clone(),
            weights: mu0.weights.clone(),
        })
        .collect();
    MeasureFlow {
        times: times.nodes(),
        ensembles,
    }
}

fn out_of_box(t: f64, particle: usize, x: f64, v: f64, detail: &str) -> Error {
    Error::Transport {
        t,
        particle,
        detail: format!("state ({x}, {v}) outside the {detail}"),
    }
}

/// Integrate `x' = v`, `v' = -(1/eps) D_v u(t, x, v)` for every particle with
/// RK4 sub-steps no longer than `max_step` or the time-grid spacing,
/// recording the ensemble at the time nodes of `grad_v`.
pub fn transport_eps(mu0: &ParticleEnsemble, grad_v: &ValueField, eps: f64, max_step: f64) -> Result<MeasureFlow> {
    if !(eps > 0.0 && max_step > 0.0) {
        return Err(Error::invalid("transport needs eps > 0 and a positive step"));
    }
    let va = grad_v
        .v
        .ok_or_else(|| Error::invalid("transport needs a phase-space gradient field"))?;
    let times = grad_v.t;
    let dt = times.step();
    let subs = (dt / dt.min(max_step)).ceil() as usize;
    let h = dt / subs as f64;
    let (xa, nt) = (grad_v.x, times.n);
    let inside = |x: f64, v: f64| xa.contains(x) && va.contains(v);
    let accel = |t: f64, x: f64, v: f64| -grad_v.interp(t, x, v) / eps;

    let paths: Vec<Vec<(f64, f64)>> = (0..mu0.len())
        .into_par_iter()
        .map(|p| {
            let (mut x, mut v) = (mu0.positions[p], mu0.velocities[p]);
            if !inside(x, v) {
                return Err(out_of_box(times.min, p, x, v, "phase grid"));
            }
            let mut path = Vec::with_capacity(nt);
            path.push((x, v));
            for k in 0..nt - 1 {
                let t0 = times.node(k);
                for s in 0..subs {
                    let t = t0 + h * s as f64;
                    let (k1x, k1v) = (v, accel(t, x, v));
                    let (k2x, k2v) = (v + 0.5 * h * k1v, accel(t + 0.5 * h, x + 0.5 * h * k1x, v + 0.5 * h * k1v));
                    let (k3x, k3v) = (v + 0.5 * h * k2v, accel(t + 0.5 * h, x + 0.5 * h * k2x, v + 0.5 * h * k2v));
                    let (k4x, k4v) = (v + h * k3v, accel(t + h, x + h * k3x, v + h * k3v));
                    x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
                    v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
                    if !x.is_finite() || !v.is_finite() || !inside(x, v) {
                        return Err(out_of_box(t + h, p, x, v, "phase grid"));
                    }
                }
                path.push((x, v));
            }
            Ok(path)
        })
        .collect::<Result<_>>()?;
    Ok(assemble(mu0, &times, &paths))
}

fn assemble(mu0: &ParticleEnsemble, times: &Axis, paths: &[Vec<(f64, f64)>]) -> MeasureFlow {
    let ensembles = (0..times.n)
        .map(|k| ParticleEnsemble {
            positions: paths.iter().map(|p| p[k].0).collect(),
            velocities: paths.iter().map(|p| p[k].1).collect(),
            weights: mu0.weights.clone(),
        })
        .collect();
    MeasureFlow {
        times: times.nodes(),
        ensembles,
    }
}

/// Integrate `x' = b(t, x)` (RK4, one step per time node) and attach the
/// velocity `b(t, x)` to every particle for `t > 0`; at `t = 0` the flow is
/// `mu0` itself.
pub fn transport_limit(mu0: &ParticleEnsemble, b: &ValueField) -> Result<MeasureFlow> {
    let times = b.t;
    let xa = b.x;
    let dt = times.step();
    let vel = |t: f64, x: f64| b.interp(t, x, 0.0);
    let paths: Vec<Vec<(f64, f64)>> = (0..mu0.len())
        .into_par_iter()
        .map(|p| {
            let mut x = mu0.positions[p];
            if !xa.contains(x) {
                return Err(out_of_box(times.min, p, x, 0.0, "position grid"));
            }
            let mut path = Vec::with_capacity(times.n);
            path.push((x, mu0.velocities[p]));
            for k in 0..times.n - 1 {
                let t = times.node(k);
                let k1 = vel(t, x);
                let k2 = vel(t + 0.5 * dt, x + 0.5 * dt * k1);
                let k3 = vel(t + 0.5 * dt, x + 0.5 * dt * k2);
                let k4 = vel(t + dt, x + dt * k3);
                x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                if !x.is_finite() || !xa.contains(x) {
                    return Err(out_of_box(t + dt, p, x, 0.0, "position grid"));
                }
                path.push((x, b.interp_slice(k + 1, x, 0.0)));
            }
            Ok(path)
        })
        .collect::<Result<_>>()?;
    Ok(assemble(mu0, &times, &paths))
}

/// The optimizing velocity field `b = v*(D_x u0)` of a limit value function.
pub fn limit_velocity(value: &ValueField, spec: &LagrangianSpec) -> Result<ValueField> {
    optimal_velocity_field(&value.gradient_x(), spec)
}

/// How the Picard loop measures the motion of the flow.
#[derive(Clone, Copy)]
enum Gap {
    Marginal,
    Pairing,
}

fn picard<F>(problem: &Problem, kind: SolutionKind, eps: f64, gap: Gap, mut step: F) -> Result<MFGSolution>
where
    F: FnMut(&FrozenCoupling) -> Result<(ValueField, MeasureFlow)>,
{
    let opts = problem.solver;
    if !(opts.lambda > 0.0 && opts.lambda <= 1.0) || opts.max_iter == 0 {
        return Err(Error::config("damping must lie in (0, 1] and max_iter must be positive"));
    }
    if !(opts.tol_fp > 0.0 && opts.inner_step > 0.0) {
        return Err(Error::config("tol_fp and inner_step must be positive"));
    }
    let mut flow = free_flow(&problem.mu0, &problem.grid.t);
    let mut history = Vec::new();
    let mut last = None;
    for it in 1..=opts.max_iter {
        let coupling = problem.freeze(&flow);
        let (value, new_flow) = step(&coupling)?;
        if problem.is_decoupled() {
            return Ok(MFGSolution {
                kind,
                eps,
                value,
                flow: new_flow,
                iterations: it,
                fixed_point_gap: 0.0,
                gap_history: vec![0.0],
                converged: true,
            });
        }
        let d = match gap {
            Gap::Marginal => new_flow.sup_marginal_distance(&flow)?,
            Gap::Pairing => new_flow.sup_pairing_distance(&flow)?,
        };
        history.push(d);
        if d < opts.tol_fp {
            return Ok(MFGSolution {
                kind,
                eps,
                value,
                flow: new_flow,
                iterations: it,
                fixed_point_gap: d,
                gap_history: history,
                converged: true,
            });
        }
        flow = flow.mix(&new_flow, opts.lambda)?;
        last = Some((value, new_flow));
    }
    let (value, flow) = last.expect("at least one iteration ran");
    Ok(MFGSolution {
        kind,
        eps,
        value,
        flow,
        iterations: opts.max_iter,
        fixed_point_gap: history[history.len() - 1],
        gap_history: history,
        converged: false,
    })
}

/// The penalized system for one `eps`.
pub fn solve_eps_system(problem: &Problem, eps: f64) -> Result<MFGSolution> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!(
            "the penalized system needs eps > 0 (got {eps}); use the limit solvers for eps = 0"
        )));
    }
    let controls = problem.acceleration_controls(eps)?;
    picard(problem, SolutionKind::EpsSystem, eps, Gap::Marginal, |coupling| {
        let u = hjb::solve_hjb_acceleration(&problem.grid, &problem.spec, coupling, &problem.terminal, eps, &controls)?;
        let flow = transport_eps(&problem.mu0, &u.gradient_v(), eps, eps * problem.solver.inner_step)?;
        Ok((u, flow))
    })
}

/// The classical first-order limit system.
pub fn solve_limit_classical(problem: &Problem) -> Result<MFGSolution> {
    if problem.spec.coupling.is_active() && problem.spec.coupling.kind == CouplingKind::Joint {
        return Err(Error::Unsupported(
            "the classical limit needs a coupling through the position marginal".into(),
        ));
    }
    picard(problem, SolutionKind::ClassicalLimit, 0.0, Gap::Marginal, |coupling| {
        let u = hjb::solve_hjb_limit_classical(
            &problem.grid,
            &problem.spec,
            coupling,
            &problem.terminal,
            &problem.velocity_controls,
        )?;
        let flow = transport_limit(&problem.mu0, &limit_velocity(&u, &problem.spec)?)?;
        Ok((u, flow))
    })
}

/// The MFG-of-control limit: the joint measure is rebuilt as
/// `(Id, b(t, .)) # m_t` at every iteration.
pub fn solve_mfg_of_control(problem: &Problem) -> Result<MFGSolution> {
    picard(problem, SolutionKind::MfgOfControl, 0.0, Gap::Pairing, |coupling| {
        let u = hjb::solve_hjb_mfg_control(
            &problem.grid,
            &problem.spec,
            coupling,
            &problem.terminal,
            &problem.velocity_controls,
        )?;
        let flow = transport_limit(&problem.mu0, &limit_velocity(&u, &problem.spec)?)?;
        Ok((u, flow))
    })
}

/// Limit solver selected by kind.
pub fn solve_limit(problem: &Problem, kind: SolutionKind) -> Result<MFGSolution> {
    match kind {
        SolutionKind::ClassicalLimit => solve_limit_classical(problem),
        SolutionKind::MfgOfControl => solve_mfg_of_control(problem),
        SolutionKind::EpsSystem => Err(Error::invalid("not a limit system")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coupling, Kinetic, Potential};

    fn field(t: Axis, x: Axis, v: Axis, f: impl Fn(f64, f64) -> f64) -> ValueField {
        let mut vals = Vec::new();
        for _ in 0..t.n {
            for i in 0..x.n {
                for j in 0..v.n {
                    vals.push(f(x.node(i), v.node(j)));
                }
            }
        }
        ValueField::phase(t, x, v, 0.1, vals)
    }

    #[test]
    fn zero_gradient_is_free_transport() {
        let (t, x, v) = (Axis::new(0.0, 1.0, 11), Axis::symmetric(4.0, 9), Axis::symmetric(2.0, 9));
        let mu = ParticleEnsemble::lattice(3, 3, (-1.0, 1.0), (-1.0, 1.0));
        let flow = transport_eps(&mu, &field(t, x, v, |_, _| 0.0), 0.1, 0.025).unwrap();
        for (k, e) in flow.ensembles.iter().enumerate() {
            for p in 0..mu.len() {
                let expect = mu.positions[p] + mu.velocities[p] * t.node(k);
                assert!((e.positions[p] - expect).abs() < 1e-12);
                assert_eq!(e.weights, mu.weights);
            }
        }
    }

    #[test]
    fn linear_gradient_gives_exponential_decay() {
        // u = eps/2 v^2, so v' = -v
        let eps = 0.1;
        let (t, x, v) = (Axis::new(0.0, 1.0, 101), Axis::symmetric(4.0, 9), Axis::symmetric(2.0, 41));
        let grad = field(t, x, v, |_, v| eps * v);
        let mu = ParticleEnsemble::new(vec![0.0], vec![1.0], vec![1.0]).unwrap();
        let flow = transport_eps(&mu, &grad, eps, eps / 4.0).unwrap();
        for (k, e) in flow.ensembles.iter().enumerate() {
            let tk = t.node(k);
            assert!((e.velocities[0] - (-tk).exp()).abs() < 1e-4);
            assert!((e.positions[0] - (1.0 - (-tk).exp())).abs() < 1e-4);
        }
    }

    #[test]
    fn leaving_the_box_names_the_particle() {
        let (t, x, v) = (Axis::new(0.0, 1.0, 11), Axis::symmetric(1.0, 9), Axis::symmetric(2.0, 9));
        let mu = ParticleEnsemble::new(vec![0.0, 0.5], vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        match transport_eps(&mu, &field(t, x, v, |_, _| 0.0), 0.1, 0.025) {
            Err(Error::Transport { particle, .. }) => assert_eq!(particle, 1),
            other => panic!("{other:?}"),
        }
    }

    fn small_problem(spec: LagrangianSpec) -> Problem {
        Problem {
            spec,
            terminal: TerminalCost::ZERO,
            grid: PhaseGrid::new(1.0, 41, 3.0, 41, 3.0, 31).unwrap(),
            n_a: 21,
            a_max: 4.0,
            velocity_controls: ControlSet::velocity(61, 3.0).unwrap(),
            mu0: ParticleEnsemble::lattice(5, 4, (-1.0, 1.0), (-1.0, 1.0)),
            solver: SolverOptions::default(),
        }
    }

    #[test]
    fn decoupled_systems_take_one_iteration() {
        let p = small_problem(LagrangianSpec::quadratic(1.0, Coupling::NONE, 10.0));
        for sol in [
            solve_eps_system(&p, 0.2).unwrap(),
            solve_limit_classical(&p).unwrap(),
            solve_mfg_of_control(&p).unwrap(),
        ] {
            assert_eq!(sol.iterations, 1);
            assert!(sol.converged);
            assert_eq!(sol.fixed_point_gap, 0.0);
        }
    }

    #[test]
    fn trivial_control_limit_keeps_particles_at_rest() {
        let spec = LagrangianSpec {
            kinetic: Kinetic::HALF_SQUARE,
            potential: Potential::Zero,
            offset: 0.0,
            coupling: Coupling::NONE,
            m0: 10.0,
            theta_bound: 0.0,
        };
        let p = small_problem(spec);
        let sol = solve_mfg_of_control(&p).unwrap();
        assert!(sol.value.values.iter().all(|&u| u == 0.0));
        for e in &sol.flow.ensembles[1..] {
            assert_eq!(e.positions, p.mu0.positions);
            assert!(e.velocities.iter().all(|&b| b == 0.0));
        }
        assert_eq!(sol.flow.ensembles[0], p.mu0);
    }

    #[test]
    fn zero_penalty_is_rejected() {
        let p = small_problem(LagrangianSpec::quadratic(1.0, Coupling::NONE, 10.0));
        assert!(matches!(solve_eps_system(&p, 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn coupled_system_converges() {
        let coupling = Coupling {
            kind: CouplingKind::Marginal,
            strength: 0.5,
            sigma: 0.3,
        };
        let p = small_problem(LagrangianSpec::quadratic(1.0, coupling, 10.0));
        let sol = solve_eps_system(&p, 0.2).unwrap();
        assert!(sol.converged, "{:?}", sol.gap_history);
        assert!(sol.fixed_point_gap < p.solver.tol_fp);
        let lim = solve_limit_classical(&p).unwrap();
        assert!(lim.converged, "{:?}", lim.gap_history);
    }
}
