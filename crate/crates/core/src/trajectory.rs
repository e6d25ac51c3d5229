//! Curves and the penalized action
//! `J(gamma) = int eps/2 |gamma''|^2 + L0(gamma, gamma', m_s) ds + g(gamma(T), m_T)`:
//! evaluation, direct minimization, the fourth-order Euler-Lagrange boundary
//! value problem, and the cubic that switches velocities in time `sqrt(eps)`.
//!
//! Minimization works on the transcription (`N = M - 1` intervals of width
//! `h`)
//!
//! ```text
//! J_h = sum_{i=1}^{N-1} h eps/2 (d2 gamma_i / h^2)^2
//!     + sum_{i=0}^{N-1} h L0((gamma_i + gamma_{i+1})/2, (gamma_{i+1} - gamma_i)/h, m(t_{i+1/2}))
//!     + g(gamma_N, m_T)
//! ```
//!
//! with `gamma_0 = x` and, for `eps > 0`, `gamma_1 = x + h v`. Its
//! stationarity equations divided by `h` are the standard finite-difference
//! stencil of `eps gamma'''' - gamma'' + D_x L0 = 0` in the interior, and a
//! discretization of the natural conditions `gamma''(T) = 0`,
//! `-eps gamma'''(T) + D_v L0 + D_x g = 0` in the last two rows.
//!
//! Residuals are reported as backward errors: the raw residual divided by
//! the magnitude of the terms it balances (`16 eps / h^4 |gamma|`, ...).
//! The raw residual of the fourth-difference stencil cannot drop below
//! `eps / h^4` times the rounding error of `gamma`.

use serde::Serialize;

use crate::linalg::{self, BandMatrix};
use crate::model::{FrozenCoupling, LagrangianSpec, MeasureRef, TerminalCost};
use crate::{Error, Result};

/// Uniform samples of a curve on `[t0, t1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub t0: f64,
    pub t1: f64,
    pub gamma: Vec<f64>,
}

impl Curve {
    pub fn new(t0: f64, t1: f64, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() < 4 {
            return Err(Error::invalid("a curve needs at least 4 samples"));
        }
        if !(t1 > t0) {
            return Err(Error::invalid("curve interval must have positive length"));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("non-finite curve sample"));
        }
        Ok(Curve { t0, t1, gamma })
    }

    /// Sample `f` at `m` points.
    pub fn sample(t0: f64, t1: f64, m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = (t1 - t0) / (m.max(2) - 1) as f64;
        Curve::new(t0, t1, (0..m).map(|i| f(t0 + h * i as f64)).collect())
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / (self.gamma.len() - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.gamma.len() {
            self.t1
        } else {
            self.t0 + self.h() * i as f64
        }
    }

    /// Centered differences, second-order one-sided at the ends.
    pub fn velocity(&self) -> Vec<f64> {
        let g = &self.gamma;
        let (n, h) = (g.len(), self.h());
        (0..n)
            .map(|i| {
                if i == 0 {
                    (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h)
                } else if i + 1 == n {
                    (3.0 * g[n - 1] - 4.0 * g[n - 2] + g[n - 3]) / (2.0 * h)
                } else {
                    (g[i + 1] - g[i - 1]) / (2.0 * h)
                }
            })
            .collect()
    }

    /// Second differences, second-order one-sided at the ends.
    pub fn acceleration(&self) -> Vec<f64> {
        let g = &self.gamma;
        let (n, h2) = (g.len(), self.h() * self.h());
        (0..n)
            .map(|i| {
                if i == 0 {
                    (2.0 * g[0] - 5.0 * g[1] + 4.0 * g[2] - g[3]) / h2
                } else if i + 1 == n {
                    (2.0 * g[n - 1] - 5.0 * g[n - 2] + 4.0 * g[n - 3] - g[n - 4]) / h2
                } else {
                    (g[i + 1] - 2.0 * g[i] + g[i - 1]) / h2
                }
            })
            .collect()
    }

    /// `sup_i |gamma_i - other_i|` for curves on the same samples.
    pub fn sup_distance(&self, other: &Curve) -> f64 {
        self.gamma
            .iter()
            .zip(&other.gamma)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

fn trapezoid(f: &[f64], h: f64) -> f64 {
    crate::measures::trapezoid(f, h)
}

/// `int |gamma'|^2` (trapezoid).
pub fn energy(curve: &Curve) -> f64 {
    let v: Vec<f64> = curve.velocity().iter().map(|v| v * v).collect();
    trapezoid(&v, curve.h())
}

/// `int_{t0 + delta}^{t1} |gamma''|^2` (trapezoid from the first sample at or
/// after `t0 + delta`).
pub fn accel_energy(curve: &Curve, delta: f64) -> f64 {
    let start = ((delta / curve.h()) - 1e-9).ceil().max(0.0) as usize;
    let a: Vec<f64> = curve.acceleration().iter().map(|a| a * a).collect();
    if start >= a.len() {
        return 0.0;
    }
    trapezoid(&a[start..], curve.h())
}

/// `J` by the composite trapezoid rule with the fixed derivative rules of
/// [`Curve`].
pub fn eval_cost(
    curve: &Curve,
    eps: f64,
    spec: &LagrangianSpec,
    coupling: &FrozenCoupling,
    g: &TerminalCost,
) -> f64 {
    let vel = curve.velocity();
    let acc = curve.acceleration();
    let integrand: Vec<f64> = (0..curve.len())
        .map(|i| {
            let m = coupling.running_at(curve.time(i));
            0.5 * eps * acc[i] * acc[i] + spec.l0(curve.gamma[i], vel[i], m)
        })
        .collect();
    trapezoid(&integrand, curve.h()) + g.eval(curve.gamma[curve.len() - 1], coupling.terminal())
}

/// The transcribed action `J_h` for a fixed start `(t0, x, v)`.
struct Action<'a> {
    eps: f64,
    t0: f64,
    h: f64,
    n: usize,
    /// Number of leading samples fixed by the initial conditions.
    fixed: usize,
    x: f64,
    v: f64,
    spec: &'a LagrangianSpec,
    coupling: &'a FrozenCoupling,
    g: &'a TerminalCost,
}

/// Gradient pieces needed for residual scaling.
struct Gradient {
    full: Vec<f64>,
    /// Per node sum of the magnitudes of the terms it balances.
    scale: Vec<f64>,
}

impl<'a> Action<'a> {
    fn new(
        eps: f64,
        t0: f64,
        t1: f64,
        x: f64,
        v: f64,
        m: usize,
        spec: &'a LagrangianSpec,
        coupling: &'a FrozenCoupling,
        g: &'a TerminalCost,
    ) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::invalid(format!("penalty must be nonnegative, got {eps}")));
        }
        if m < 5 {
            return Err(Error::invalid("need at least 5 curve samples"));
        }
        if !(t1 > t0) || !x.is_finite() || !v.is_finite() {
            return Err(Error::invalid("invalid initial data"));
        }
        let n = m - 1;
        Ok(Action {
            eps,
            t0,
            h: (t1 - t0) / n as f64,
            n,
            fixed: if eps > 0.0 { 2 } else { 1 },
            x,
            v,
            spec,
            coupling,
            g,
        })
    }

    fn free(&self) -> usize {
        self.n + 1 - self.fixed
    }

    fn embed(&self, z: &[f64]) -> Vec<f64> {
        let mut gamma = Vec::with_capacity(self.n + 1);
        gamma.push(self.x);
        if self.fixed == 2 {
            gamma.push(self.x + self.h * self.v);
        }
        gamma.extend_from_slice(z);
        gamma
    }

    fn initial_guess(&self) -> Vec<f64> {
        (self.fixed..=self.n)
            .map(|i| self.x + self.v * self.h * i as f64)
            .collect()
    }

    fn measure(&self, i: usize) -> MeasureRef<'a> {
        self.coupling.running_at(self.t0 + self.h * (i as f64 + 0.5))
    }

    fn value(&self, gamma: &[f64]) -> f64 {
        let (h, n) = (self.h, self.n);
        let mut total = 0.0;
        if self.eps > 0.0 {
            let w = 0.5 * self.eps / (h * h * h);
            for i in 1..n {
                let a = gamma[i + 1] - 2.0 * gamma[i] + gamma[i - 1];
                total += w * a * a;
            }
        }
        for i in 0..n {
            let mid = 0.5 * (gamma[i] + gamma[i + 1]);
            let vel = (gamma[i + 1] - gamma[i]) / h;
            total += h * self.spec.l0(mid, vel, self.measure(i));
        }
        total + self.g.eval(gamma[n], self.coupling.terminal())
    }

    fn gradient(&self, gamma: &[f64]) -> Gradient {
        let (h, n) = (self.h, self.n);
        let mut full = vec![0.0; n + 1];
        let mut scale = vec![0.0; n + 1];
        if self.eps > 0.0 {
            let w = self.eps / (h * h * h);
            for i in 1..n {
                let a = w * (gamma[i + 1] - 2.0 * gamma[i] + gamma[i - 1]);
                full[i - 1] += a;
                full[i] -= 2.0 * a;
                full[i + 1] += a;
                let mag = w * (gamma[i + 1].abs() + 2.0 * gamma[i].abs() + gamma[i - 1].abs());
                scale[i - 1] += mag;
                scale[i] += 2.0 * mag;
                scale[i + 1] += mag;
            }
        }
        for i in 0..n {
            let m = self.measure(i);
            let mid = 0.5 * (gamma[i] + gamma[i + 1]);
            let vel = (gamma[i + 1] - gamma[i]) / h;
            let lx = 0.5 * h * self.spec.dx_l0(mid, vel, m);
            let lv = self.spec.dv_l0(mid, vel, m);
            full[i] += lx - lv;
            full[i + 1] += lx + lv;
            let mag = lx.abs() + lv.abs() + self.spec.kinetic.dvv(vel) * (gamma[i + 1].abs() + gamma[i].abs()) / h;
            scale[i] += mag;
            scale[i + 1] += mag;
        }
        let dg = self.g.dx(gamma[n], self.coupling.terminal());
        full[n] += dg;
        scale[n] += dg.abs();
        Gradient { full, scale }
    }

    /// Backward error of the stationarity equations on the free nodes.
    fn stationarity(&self, grad: &Gradient) -> f64 {
        (self.fixed..=self.n)
            .map(|i| grad.full[i].abs() / (grad.scale[i] + self.h))
            .fold(0.0, f64::max)
    }

    /// Max of `|dJ_h/d gamma_i| / h` over the free nodes.
    fn raw_residual(&self, grad: &Gradient) -> f64 {
        (self.fixed..=self.n)
            .map(|i| grad.full[i].abs() / self.h)
            .fold(0.0, f64::max)
    }

    /// Hessian on the free nodes; bandwidth 2.
    fn hessian(&self, gamma: &[f64], positive_part: bool) -> BandMatrix {
        let (h, n, f) = (self.h, self.n, self.fixed);
        let mut hm = BandMatrix::zeros(self.free(), 2, 2);
        let mut add = |i: usize, j: usize, v: f64| {
            if i >= f && j >= f {
                hm.add(i - f, j - f, v);
            }
        };
        if self.eps > 0.0 {
            let w = self.eps / (h * h * h);
            let st = [1.0, -2.0, 1.0];
            for i in 1..n {
                for (p, sp) in st.iter().enumerate() {
                    for (q, sq) in st.iter().enumerate() {
                        add(i - 1 + p, i - 1 + q, w * sp * sq);
                    }
                }
            }
        }
        for i in 0..n {
            let m = self.measure(i);
            let mid = 0.5 * (gamma[i] + gamma[i + 1]);
            let vel = (gamma[i + 1] - gamma[i]) / h;
            let mut lxx = 0.25 * h * self.spec.dxx_l0(mid, vel, m);
            let mut lvv = self.spec.dvv_l0(mid, vel, m) / h;
            if positive_part {
                lxx = lxx.max(0.0);
                lvv = lvv.max(0.0);
            }
            add(i, i, lxx + lvv);
            add(i + 1, i + 1, lxx + lvv);
            add(i, i + 1, lxx - lvv);
            add(i + 1, i, lxx - lvv);
        }
        let d = 1e-5;
        let term = self.coupling.terminal();
        let mut gxx = (self.g.dx(gamma[n] + d, term) - self.g.dx(gamma[n] - d, term)) / (2.0 * d);
        if positive_part {
            gxx = gxx.max(0.0);
        }
        add(n, n, gxx);
        hm
    }

    fn curve(&self, gamma: Vec<f64>) -> Curve {
        Curve {
            t0: self.t0,
            t1: self.t0 + self.h * self.n as f64,
            gamma,
        }
    }
}

/// Result of [`minimize_direct`].
#[derive(Debug, Clone, Serialize)]
pub struct DirectSolution {
    pub curve: Curve,
    /// `J_h` at the returned curve.
    pub cost: f64,
    /// Backward error of the stationarity equations.
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Stationarity tolerance of [`minimize_direct`].
pub const DIRECT_TOL: f64 = 1e-7;
/// Residual tolerance of [`solve_el_bvp`].
pub const BVP_TOL: f64 = 1e-8;

/// Minimize `J_h` over curves on `[t0, t_final]` with `M` samples starting
/// at `x` with velocity `v` (velocity unconstrained when `eps = 0`).
///
/// L-BFGS from the straight line `x + v (t - t0)`, preconditioned by the
/// nonnegative part of the Hessian there.
#[allow(clippy::too_many_arguments)]
pub fn minimize_direct(
    eps: f64,
    t0: f64,
    t_final: f64,
    x: f64,
    v: f64,
    spec: &LagrangianSpec,
    coupling: &FrozenCoupling,
    g: &TerminalCost,
    m: usize,
) -> Result<DirectSolution> {
    let act = Action::new(eps, t0, t_final, x, v, m, spec, coupling, g)?;
    let z0 = act.initial_guess();
    let lu = act.hessian(&act.embed(&z0), true).factor()?;
    let f = act.fixed;
    let result = linalg::lbfgs(
        z0,
        |z, grad| {
            let gamma = act.embed(z);
            let gr = act.gradient(&gamma);
            grad.copy_from_slice(&gr.full[f..]);
            act.value(&gamma)
        },
        |q| lu.solve(q),
        |z, _| act.stationarity(&act.gradient(&act.embed(z))),
        // polish well past the reporting tolerance; stalls end the descent
        1e-13,
        1000,
    );
    let gamma = act.embed(&result.x);
    Ok(DirectSolution {
        cost: act.value(&gamma),
        stationarity: result.stationarity,
        iterations: result.iterations,
        converged: result.stationarity < DIRECT_TOL,
        curve: act.curve(gamma),
    })
}

/// Result of [`solve_el_bvp`].
#[derive(Debug, Clone, Serialize)]
pub struct BvpSolution {
    pub curve: Curve,
    /// `J_h` at the solution.
    pub cost: f64,
    /// Backward error of the discrete equations.
    pub residual: f64,
    /// Max raw residual `|eps d4/h^4 - d2/h^2 + D_x L0|`.
    pub raw_residual: f64,
    /// `gamma(0) - x`, `gamma'(0) - v`, `gamma''(T)`,
    /// `-eps gamma'''(T) + D_v L0 + D_x g` by one-sided differences; the last
    /// two vanish at first order in `h`.
    pub boundary_residuals: [f64; 4],
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Newton's method on the discrete Euler-Lagrange equations of `J_h` with a
/// banded LU solve and a backtracking line search on `J_h`.
#[allow(clippy::too_many_arguments)]
pub fn solve_el_bvp(
    eps: f64,
    t0: f64,
    t_final: f64,
    x: f64,
    v: f64,
    spec: &LagrangianSpec,
    coupling: &FrozenCoupling,
    g: &TerminalCost,
    m: usize,
) -> Result<BvpSolution> {
    if !(eps > 0.0) {
        return Err(Error::invalid("the fourth-order boundary value problem needs eps > 0"));
    }
    let act = Action::new(eps, t0, t_final, x, v, m, spec, coupling, g)?;
    let f = act.fixed;
    let mut z = act.initial_guess();
    let mut gamma = act.embed(&z);
    let mut grad = act.gradient(&gamma);
    let mut value = act.value(&gamma);
    let mut history = vec![act.stationarity(&grad)];
    for _ in 0..100 {
        if history[history.len() - 1] < 1e-14 {
            break;
        }
        let rhs: Vec<f64> = grad.full[f..].iter().map(|g| -g).collect();
        let mut step = act.hessian(&gamma, false).factor().map(|lu| lu.solve(&rhs)).ok();
        if step
            .as_ref()
            .is_none_or(|s| linalg::dot(s, &rhs) <= 0.0)
        {
            // indefinite Hessian: fall back to the convexified one
            step = Some(act.hessian(&gamma, true).factor()?.solve(&rhs));
        }
        let step = step.unwrap_or_default();
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = z.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let tg = act.embed(&trial);
            let tv = act.value(&tg);
            let tgrad = act.gradient(&tg);
            let ts = act.stationarity(&tgrad);
            // accept descent, or equal value with a smaller residual near the optimum
            if tv < value || (tv <= value + 1e-14 * value.abs().max(1.0) && ts < history[history.len() - 1]) {
                z = trial;
                gamma = tg;
                value = tv;
                grad = tgrad;
                history.push(ts);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let residual = history[history.len() - 1];
    let raw_residual = act.raw_residual(&grad);
    let curve = act.curve(gamma);
    let boundary_residuals = boundary_residuals(&curve, eps, x, v, spec, coupling, g);
    Ok(BvpSolution {
        cost: value,
        residual,
        raw_residual,
        boundary_residuals,
        history,
        converged: residual < BVP_TOL,
        curve,
    })
}

fn boundary_residuals(
    curve: &Curve,
    eps: f64,
    x: f64,
    v: f64,
    spec: &LagrangianSpec,
    coupling: &FrozenCoupling,
    g: &TerminalCost,
) -> [f64; 4] {
    let gm = &curve.gamma;
    let n = gm.len() - 1;
    let h = curve.h();
    let vel = curve.velocity();
    let acc = curve.acceleration();
    // second-order one-sided third difference at the right end
    let third = (5.0 * gm[n] - 18.0 * gm[n - 1] + 24.0 * gm[n - 2] - 14.0 * gm[n - 3] + 3.0 * gm[n - 4])
        / (2.0 * h * h * h);
    let m_t = coupling.running_at(curve.t1);
    [
        gm[0] - x,
        vel[0] - v,
        acc[n],
        -eps * third + spec.dv_l0(gm[n], vel[n], m_t) + g.dx(gm[n], coupling.terminal()),
    ]
}

/// `sigma(t) = x + v0 t + B t^2 + A t^3` on `[0, sqrt(eps)]` with
/// `B = -(2 v0 + v1) / sqrt(eps)`, `A = (v1 + v0) / eps`: starts at `x` with
/// velocity `v0` and returns to `x` with velocity `v1`.
pub fn connecting_curve(x: f64, v0: f64, v1: f64, eps: f64, m: usize) -> Result<Curve> {
    if !(eps > 0.0) {
        return Err(Error::invalid("connecting curve needs eps > 0"));
    }
    let (b, a) = connecting_coefficients(v0, v1, eps);
    Curve::sample(0.0, eps.sqrt(), m, |t| x + v0 * t + b * t * t + a * t * t * t)
}

/// `(B, A)` of [`connecting_curve`].
pub fn connecting_coefficients(v0: f64, v1: f64, eps: f64) -> (f64, f64) {
    (-(2.0 * v0 + v1) / eps.sqrt(), (v1 + v0) / eps)
}

/// Endpoint residuals `sigma(0) - x`, `sigma'(0) - v0`, `sigma(s) - x`,
/// `sigma'(s) - v1` at `s = sqrt(eps)`, from the exact polynomial.
pub fn connecting_residuals(x: f64, v0: f64, v1: f64, eps: f64) -> [f64; 4] {
    let (b, a) = connecting_coefficients(v0, v1, eps);
    let s = eps.sqrt();
    let pos = x + v0 * s + b * s * s + a * s * s * s;
    let vel = v0 + 2.0 * b * s + 3.0 * a * s * s;
    [0.0, 0.0, pos - x, vel - v1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coupling;

    fn free() -> LagrangianSpec {
        LagrangianSpec::quadratic(0.0, Coupling::NONE, 10.0)
    }

    #[test]
    fn derivative_rules_are_exact_on_quadratics() {
        let c = Curve::sample(0.0, 1.0, 11, |t| 0.5 * t * t).unwrap();
        for (i, v) in c.velocity().iter().enumerate() {
            assert!((v - c.time(i)).abs() < 1e-12);
        }
        assert!(c.acceleration().iter().all(|a| (a - 1.0).abs() < 1e-9));
    }

    #[test]
    fn energy_examples() {
        let line = Curve::sample(0.0, 2.0, 101, |t| 1.5 * t).unwrap();
        assert!((energy(&line) - 2.25 * 2.0).abs() < 1e-12);
        let flat = Curve::sample(0.0, 1.0, 11, |_| 0.4).unwrap();
        assert!(energy(&flat) < 1e-28);
        assert!(accel_energy(&flat, 0.0) < 1e-24);
        let para = Curve::sample(0.0, 1.0, 2001, |t| 0.5 * t * t).unwrap();
        assert!((accel_energy(&para, 0.0) - 1.0).abs() < 1e-6);
        assert!((energy(&para) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn eval_cost_examples() {
        let none = FrozenCoupling::none();
        let g0 = TerminalCost::ZERO;
        let flat = Curve::sample(0.0, 1.0, 51, |_| 2.0).unwrap();
        assert_eq!(eval_cost(&flat, 0.3, &free(), &none, &g0), 0.0);
        let line = Curve::sample(0.0, 3.0, 51, |t| -0.8 * t).unwrap();
        assert!((eval_cost(&line, 0.3, &free(), &none, &g0) - 0.5 * 0.64 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn connecting_curve_example() {
        let (b, a) = connecting_coefficients(1.0, 0.0, 0.04);
        assert!((b + 10.0).abs() < 1e-12 && (a - 25.0).abs() < 1e-12);
        let r = connecting_residuals(0.0, 1.0, 0.0, 0.04);
        assert!(r.iter().all(|r| r.abs() < 1e-12));
        let c = connecting_curve(0.7, 0.0, 0.0, 0.1, 11).unwrap();
        assert!(c.gamma.iter().all(|&g| g == 0.7));
    }

    #[test]
    fn free_particle_at_rest_stays() {
        let none = FrozenCoupling::none();
        let d = minimize_direct(0.1, 0.0, 1.0, 0.3, 0.0, &free(), &none, &TerminalCost::ZERO, 101).unwrap();
        assert!(d.converged);
        assert!(d.cost.abs() < 1e-14);
        assert!(d.curve.gamma.iter().all(|g| (g - 0.3).abs() < 1e-12));
        let b = solve_el_bvp(0.1, 0.0, 1.0, 0.3, 0.0, &free(), &none, &TerminalCost::ZERO, 101).unwrap();
        assert!(b.converged && b.raw_residual == 0.0);
        assert!(b.boundary_residuals.iter().all(|r| r.abs() < 1e-9), "{:?}", b.boundary_residuals);
    }

    #[test]
    fn direct_and_newton_agree_on_lq() {
        let spec = LagrangianSpec::quadratic(1.0, Coupling::NONE, 10.0);
        let none = FrozenCoupling::none();
        let g = TerminalCost::linear(0.2);
        for eps in [0.05, 0.1] {
            let d = minimize_direct(eps, 0.0, 1.0, 1.0, -0.5, &spec, &none, &g, 401).unwrap();
            let b = solve_el_bvp(eps, 0.0, 1.0, 1.0, -0.5, &spec, &none, &g, 401).unwrap();
            assert!(d.converged && b.converged, "{} {}", d.stationarity, b.residual);
            assert!((d.cost - b.cost).abs() < 1e-9, "{} vs {}", d.cost, b.cost);
            assert!(d.curve.sup_distance(&b.curve) < 1e-6);
            assert!(b.boundary_residuals[2].abs() < 0.5);
        }
    }

    #[test]
    fn zero_penalty_drops_the_velocity_constraint() {
        let none = FrozenCoupling::none();
        let d = minimize_direct(0.0, 0.0, 1.0, 0.0, 3.0, &free(), &none, &TerminalCost::ZERO, 51).unwrap();
        assert!(d.converged);
        assert!(d.cost.abs() < 1e-12);
        assert!(solve_el_bvp(0.0, 0.0, 1.0, 0.0, 1.0, &free(), &none, &TerminalCost::ZERO, 51).is_err());
    }
}
