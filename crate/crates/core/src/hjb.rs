//! Backward semi-Lagrangian solvers for the penalized HJB equation on
//! `(t, x, v)` grids and for the two limit equations on `(t, x)` grids.
//!
//! Each backward step minimizes, over a finite control set, the running cost
//! (trapezoid rule in time) plus the bilinear interpolant of the next time
//! slice at the foot of the characteristic. Foot points outside the box are
//! clamped to it and charged a growth penalty derived from the a priori value
//! bounds, which makes outward excursions suboptimal; these extrapolated
//! values are kept inside the envelope `[-T M0 - |g|, M0 T (1 + v^2) + |g|]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Axis;
use crate::model::{FrozenCoupling, LagrangianSpec, TerminalCost};
use crate::{Error, Result};

/// Truncated phase space `[0, T] x [-R_x, R_x] x [-R_v, R_v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub t: Axis,
    pub x: Axis,
    pub v: Axis,
}

impl PhaseGrid {
    pub fn new(t_final: f64, n_t: usize, r_x: f64, n_x: usize, r_v: f64, n_v: usize) -> Result<Self> {
        if !(t_final > 0.0) || !(r_x > 0.0) || !(r_v > 0.0) {
            return Err(Error::config("horizon and box radii must be positive"));
        }
        if n_t < 3 || n_x < 3 || n_v < 3 {
            return Err(Error::config("every grid axis needs at least 3 nodes"));
        }
        Ok(PhaseGrid {
            t: Axis::new(0.0, t_final, n_t),
            x: Axis::symmetric(r_x, n_x),
            v: Axis::symmetric(r_v, n_v),
        })
    }

    pub fn dt(&self) -> f64 {
        self.t.step()
    }

    pub fn t_final(&self) -> f64 {
        self.t.max
    }

    /// All three spacings halved.
    pub fn refined(&self) -> Self {
        PhaseGrid {
            t: self.t.refined(),
            x: self.x.refined(),
            v: self.v.refined(),
        }
    }

    /// `R_v - sqrt(E / T)` for the energy bound `E = Q1 (1 + v0^2)` of the
    /// fastest initial velocity; negative when the velocity box does not
    /// contain the energy ball.
    pub fn velocity_margin(&self, energy_bound: f64) -> f64 {
        self.v.max - (energy_bound / self.t_final()).sqrt()
    }
}

/// A finite symmetric control set containing 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub values: Vec<f64>,
}

impl ControlSet {
    /// `n` accelerations (odd) in `[-A, A]` with `A = a_max / sqrt(eps)`,
    /// spaced quadratically (`A s |s|` for uniform `s`) so small accelerations
    /// are resolved finely while the reach scales with the relaxation rate.
    pub fn acceleration(n: usize, a_max: f64, eps: f64) -> Result<Self> {
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::config(format!("acceleration controls must be an odd count >= 3, got {n}")));
        }
        if !(a_max > 0.0) || !(eps > 0.0) {
            return Err(Error::config("a_max and eps must be positive"));
        }
        let reach = a_max / eps.sqrt();
        let h = (n - 1) / 2;
        let values = (0..n)
            .map(|k| {
                let s = (k as f64 - h as f64) / h as f64;
                reach * s * s.abs()
            })
            .collect();
        Ok(ControlSet { values })
    }

    /// `n` (odd) uniform velocities in `[-r, r]`.
    pub fn velocity(n: usize, r: f64) -> Result<Self> {
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::config(format!("velocity controls must be an odd count >= 3, got {n}")));
        }
        Ok(ControlSet {
            values: Axis::symmetric(r, n).nodes(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, a| m.max(a.abs()))
    }
}

/// Value function samples. Layout is `((k * nx) + i) * nv + j`, with
/// `nv = 1` for limit fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub t: Axis,
    pub x: Axis,
    pub v: Option<Axis>,
    /// Penalty parameter; 0 for limit fields.
    pub eps: f64,
    pub values: Vec<f64>,
}

impl ValueField {
    pub fn phase(t: Axis, x: Axis, v: Axis, eps: f64, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), t.n * x.n * v.n);
        ValueField {
            t,
            x,
            v: Some(v),
            eps,
            values,
        }
    }

    pub fn limit(t: Axis, x: Axis, eps: f64, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), t.n * x.n);
        ValueField {
            t,
            x,
            v: None,
            eps,
            values,
        }
    }

    #[inline]
    pub fn nv(&self) -> usize {
        self.v.map_or(1, |v| v.n)
    }

    #[inline]
    pub fn index(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.x.n + i) * self.nv() + j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[self.index(k, i, j)]
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let len = self.x.n * self.nv();
        &self.values[k * len..(k + 1) * len]
    }

    /// Bilinear (limit fields: linear) interpolation in slice `k`, clamped.
    #[inline]
    pub fn interp_slice(&self, k: usize, x: f64, v: f64) -> f64 {
        let s = self.slice(k);
        match self.v {
            Some(va) => bilinear(s, self.x, va, x, v),
            None => linear(s, self.x, x),
        }
    }

    /// Interpolation in `(t, x, v)`, linear in time between slices.
    pub fn interp(&self, t: f64, x: f64, v: f64) -> f64 {
        let (k, r) = self.t.locate(t);
        let a = self.interp_slice(k, x, v);
        if r == 0.0 {
            return a;
        }
        (1.0 - r) * a + r * self.interp_slice(k + 1, x, v)
    }

    /// Centered differences in the interior, one-sided at the boundary.
    pub fn gradient_x(&self) -> ValueField {
        let (nx, nv) = (self.x.n, self.nv());
        let h = self.x.step();
        let mut out = self.clone();
        for k in 0..self.t.n {
            for i in 0..nx {
                let (lo, hi, w) = stencil(i, nx, h);
                for j in 0..nv {
                    out.values[self.index(k, i, j)] =
                        (self.get(k, hi, j) - self.get(k, lo, j)) / w;
                }
            }
        }
        out
    }

    /// Centered differences in `v` (interior), one-sided at the boundary.
    /// Limit fields do not depend on `v`; their gradient is zero.
    pub fn gradient_v(&self) -> ValueField {
        let mut out = self.clone();
        let Some(va) = self.v else {
            out.values.iter_mut().for_each(|u| *u = 0.0);
            return out;
        };
        let (nx, nv) = (self.x.n, va.n);
        let h = va.step();
        for k in 0..self.t.n {
            for i in 0..nx {
                for j in 0..nv {
                    let (lo, hi, w) = stencil(j, nv, h);
                    out.values[self.index(k, i, j)] =
                        (self.get(k, i, hi) - self.get(k, i, lo)) / w;
                }
            }
        }
        out
    }
}

#[inline]
fn stencil(i: usize, n: usize, h: f64) -> (usize, usize, f64) {
    if i == 0 {
        (0, 1, h)
    } else if i + 1 == n {
        (n - 2, n - 1, h)
    } else {
        (i - 1, i + 1, 2.0 * h)
    }
}

#[inline]
fn linear(values: &[f64], x: Axis, xq: f64) -> f64 {
    let (i, s) = x.locate(xq);
    (1.0 - s) * values[i] + s * values[i + 1]
}

#[inline]
fn bilinear(values: &[f64], x: Axis, v: Axis, xq: f64, vq: f64) -> f64 {
    let nv = v.n;
    let (i, s) = x.locate(xq);
    let (j, r) = v.locate(vq);
    let a = i * nv + j;
    let b = a + nv;
    (1.0 - s) * ((1.0 - r) * values[a] + r * values[a + 1])
        + s * ((1.0 - r) * values[b] + r * values[b + 1])
}

/// Tabulated foot of one acceleration control from one velocity node.
#[derive(Debug, Clone, Copy)]
struct Foot {
    a: f64,
    vp: f64,
    /// Whole-cell shift in x.
    shift: isize,
    fx: f64,
    jv: usize,
    fv: f64,
    v_inside: bool,
    /// `eps/2 a^2 + 1/2 K(v')`.
    step_cost: f64,
}

/// A priori value bounds and the matching out-of-box penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Envelope {
    pub m0: f64,
    pub t_final: f64,
    /// `sup |g(., m_T)|` over the box.
    pub g_sup: f64,
    /// Bound for `|D_x g|`.
    pub dg: f64,
}

impl Envelope {
    #[inline]
    pub fn lower(&self) -> f64 {
        -self.t_final * self.m0 - self.g_sup
    }

    #[inline]
    pub fn upper(&self, v: f64) -> f64 {
        self.m0 * self.t_final * (1.0 + v * v) + self.g_sup
    }

    /// Growth bound of `|D_x u|` used to charge position overshoot.
    #[inline]
    fn x_slope(&self, v: f64) -> f64 {
        self.m0 * self.t_final * (1.0 + v * v) + self.dg
    }

    #[inline]
    fn clamp(&self, u: f64, v: f64) -> f64 {
        u.clamp(self.lower(), self.upper(v))
    }

    /// Smallest slack of `values` (on `(t, x, v)` nodes) inside the envelope.
    pub fn margin(&self, field: &ValueField) -> f64 {
        let nv = field.nv();
        let mut worst = f64::INFINITY;
        for (idx, &u) in field.values.iter().enumerate() {
            let v = field.v.map_or(0.0, |a| a.node(idx % nv));
            worst = worst.min(u - self.lower()).min(self.upper(v) - u);
        }
        worst
    }
}

/// State cost `V(x) + offset + kappa F(x, m_t)` tabulated on the x nodes of
/// every time slice.
fn state_cost_table(spec: &LagrangianSpec, coupling: &FrozenCoupling, t: Axis, x: Axis) -> Vec<Vec<f64>> {
    (0..t.n)
        .map(|k| {
            let m = coupling.running_at(t.node(k));
            (0..x.n).map(|i| spec.state_cost(x.node(i), m)).collect()
        })
        .collect()
}

fn terminal_slice(g: &TerminalCost, coupling: &FrozenCoupling, x: Axis) -> Vec<f64> {
    (0..x.n).map(|i| g.eval(x.node(i), coupling.terminal())).collect()
}

pub fn envelope(spec: &LagrangianSpec, g: &TerminalCost, terminal: &[f64], grid_x: Axis, t_final: f64) -> Envelope {
    Envelope {
        m0: spec.m0,
        t_final,
        g_sup: terminal.iter().fold(0.0, |m, u| m.max(u.abs())),
        dg: g.dg_bound(grid_x.max.abs().max(grid_x.min.abs())),
    }
}

/// Penalized value function `u^eps` on the phase grid.
pub fn solve_hjb_acceleration(
    grid: &PhaseGrid,
    spec: &LagrangianSpec,
    coupling: &FrozenCoupling,
    g: &TerminalCost,
    eps: f64,
    controls: &ControlSet,
) -> Result<ValueField> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("penalty must be positive, got {eps}")));
    }
    let dt = grid.dt();
    if dt * controls.max_abs() > 10.0 * grid.v.step() {
        return Err(Error::config(format!(
            "time step too large for the control set: dt * max|a| = {} exceeds 10 dv = {}",
            dt * controls.max_abs(),
            10.0 * grid.v.step()
        )));
    }
    let (nt, nx, nv) = (grid.t.n, grid.x.n, grid.v.n);
    let (xa, va) = (grid.x, grid.v);
    let table = state_cost_table(spec, coupling, grid.t, xa);
    let terminal = terminal_slice(g, coupling, xa);
    let env = envelope(spec, g, &terminal, xa, grid.t_final());
    let kin = spec.kinetic;
    let slab = nx * nv;

    let mut values = vec![0.0; nt * slab];
    for i in 0..nx {
        values[(nt - 1) * slab + i * nv..(nt - 1) * slab + (i + 1) * nv].fill(terminal[i]);
    }
    let vnodes = va.nodes();
    // The foot of a control from node (i, j) is node i shifted by a fixed
    // amount, so its cell and weights are tabulated once per (j, a).
    let feet: Vec<Vec<Foot>> = vnodes
        .iter()
        .map(|&v| {
            controls
                .values
                .iter()
                .map(|&a| {
                    let vp = v + dt * a;
                    let s = (dt * v + 0.5 * dt * dt * a) / xa.step();
                    let shift = s.floor();
                    let (jv, fv) = va.locate(vp);
                    Foot {
                        a,
                        vp,
                        shift: shift as isize,
                        fx: s - shift,
                        jv,
                        fv,
                        v_inside: va.contains(vp),
                        step_cost: 0.5 * eps * a * a + 0.5 * kin.value(vp),
                    }
                })
                .collect()
        })
        .collect();
    for k in (0..nt - 1).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * slab);
        let next: &[f64] = &tail[..slab];
        let cur = &mut head[k * slab..];
        let (s_now, s_next) = (&table[k], &table[k + 1]);
        cur.par_chunks_mut(nv).enumerate().for_each(|(i, row)| {
            let x = xa.node(i);
            for (j, out) in row.iter_mut().enumerate() {
                let v = vnodes[j];
                let l_now = kin.value(v) + s_now[i];
                let mut best = f64::INFINITY;
                for f in &feet[j] {
                    let ix = i as isize + f.shift;
                    let total = if f.v_inside && ix >= 0 && ix + 1 < nx as isize {
                        let ix = ix as usize;
                        let (fx, fv) = (f.fx, f.fv);
                        let lo = ix * nv + f.jv;
                        let hi = lo + nv;
                        let u = (1.0 - fx) * ((1.0 - fv) * next[lo] + fv * next[lo + 1])
                            + fx * ((1.0 - fv) * next[hi] + fv * next[hi + 1]);
                        let s_at = (1.0 - fx) * s_next[ix] + fx * s_next[ix + 1];
                        dt * (f.step_cost + 0.5 * (l_now + s_at)) + u
                    } else {
                        let (a, vp) = (f.a, f.vp);
                        let xp = x + dt * v + 0.5 * dt * dt * a;
                        let (xc, vc) = (xa.clamp(xp), va.clamp(vp));
                        let l_next = kin.value(vp) + linear(s_next, xa, xc);
                        let mut u = bilinear(next, xa, va, xc, vc);
                        if xc != xp || vc != vp {
                            u += env.x_slope(vc) * (xp - xc).abs() + env.m0 * env.t_final * (vp * vp - vc * vc);
                            u = env.clamp(u, vp);
                        }
                        dt * (0.5 * eps * a * a + 0.5 * (l_now + l_next)) + u
                    };
                    if total < best {
                        best = total;
                    }
                }
                *out = best;
            }
        });
    }
    Ok(ValueField::phase(grid.t, xa, va, eps, values))
}

fn solve_limit(
    grid: &PhaseGrid,
    spec: &LagrangianSpec,
    coupling: &FrozenCoupling,
    g: &TerminalCost,
    controls: &ControlSet,
) -> Result<ValueField> {
    let (nt, nx) = (grid.t.n, grid.x.n);
    let xa = grid.x;
    let dt = grid.dt();
    let table = state_cost_table(spec, coupling, grid.t, xa);
    let terminal = terminal_slice(g, coupling, xa);
    let env = envelope(spec, g, &terminal, xa, grid.t_final());
    let kin = spec.kinetic;
    let mut values = vec![0.0; nt * nx];
    values[(nt - 1) * nx..].copy_from_slice(&terminal);
    for k in (0..nt - 1).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * nx);
        let next: &[f64] = &tail[..nx];
        let cur = &mut head[k * nx..];
        let (s_now, s_next) = (&table[k], &table[k + 1]);
        cur.par_iter_mut().enumerate().for_each(|(i, out)| {
            let x = xa.node(i);
            let mut best = f64::INFINITY;
            for &b in &controls.values {
                let xp = x + dt * b;
                let xc = xa.clamp(xp);
                let mut u = linear(next, xa, xc);
                if xc != xp {
                    u = env.clamp(u + env.x_slope(b) * (xp - xc).abs(), 0.0);
                }
                let total = dt * (kin.value(b) + 0.5 * (s_now[i] + linear(s_next, xa, xc))) + u;
                if total < best {
                    best = total;
                }
            }
            *out = best;
        });
    }
    Ok(ValueField::limit(grid.t, xa, 0.0, values))
}

/// Limit value function `u0(t, x)` of the classical MFG, for a frozen
/// position-marginal flow.
pub fn solve_hjb_limit_classical(
    grid: &PhaseGrid,
    spec: &LagrangianSpec,
    coupling: &FrozenCoupling,
    g: &TerminalCost,
    controls: &ControlSet,
) -> Result<ValueField> {
    solve_limit(grid, spec, coupling, g, controls)
}

/// Limit value function of the MFG of control, running cost
/// `1/2 b^2 + L0(x, mu_t)` for a frozen joint flow.
pub fn solve_hjb_mfg_control(
    grid: &PhaseGrid,
    spec: &LagrangianSpec,
    coupling: &FrozenCoupling,
    g: &TerminalCost,
    controls: &ControlSet,
) -> Result<ValueField> {
    if !spec.is_control_form() {
        return Err(Error::Unsupported(
            "the MFG-of-control limit needs the kinetic term 1/2 v^2".into(),
        ));
    }
    solve_limit(grid, spec, coupling, g, controls)
}
