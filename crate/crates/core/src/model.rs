//! Running costs `L0(x, v, m)`, terminal costs `g(x, m)`, the Legendre
//! transform `H0(x, p, m) = sup_v { -p v - L0(x, v, m) }` and numerical
//! audits of the standing structural assumptions.
//!
//! Everything is one-dimensional. Lagrangians are separable,
//! `L0 = K(v) + V(x) + offset + kappa * F(x, m)`, where `F` is a Gaussian
//! smoothing of the population (see [`Coupling`]).

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Axis;
use crate::hjb::ValueField;
use crate::measures::{wasserstein1_1d, Marginal, MeasureFlow, ParticleEnsemble};
use crate::{Error, Result};

/// `K(v) = quadratic/2 v^2 + quartic/4 v^4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinetic {
    pub quadratic: f64,
    pub quartic: f64,
}

impl Kinetic {
    pub const HALF_SQUARE: Kinetic = Kinetic {
        quadratic: 1.0,
        quartic: 0.0,
    };

    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        let v2 = v * v;
        0.5 * self.quadratic * v2 + 0.25 * self.quartic * v2 * v2
    }

    #[inline]
    pub fn dv(&self, v: f64) -> f64 {
        self.quadratic * v + self.quartic * v * v * v
    }

    #[inline]
    pub fn dvv(&self, v: f64) -> f64 {
        self.quadratic + 3.0 * self.quartic * v * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `slope x`
    Linear { slope: f64 },
    /// `stiffness/2 x^2`
    Quadratic { stiffness: f64 },
    /// `amplitude cos(x)`
    Cosine { amplitude: f64 },
}

impl Potential {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Linear { slope } => slope * x,
            Potential::Quadratic { stiffness } => 0.5 * stiffness * x * x,
            Potential::Cosine { amplitude } => amplitude * x.cos(),
        }
    }

    #[inline]
    pub fn dx(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Linear { slope } => slope,
            Potential::Quadratic { stiffness } => stiffness * x,
            Potential::Cosine { amplitude } => -amplitude * x.sin(),
        }
    }

    #[inline]
    pub fn dxx(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero | Potential::Linear { .. } => 0.0,
            Potential::Quadratic { stiffness } => stiffness,
            Potential::Cosine { amplitude } => -amplitude * x.cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    None,
    /// `F(x, m) = (rho_sigma * m)(x)`, depends on the position marginal only.
    Marginal,
    /// `F(x, mu) = int rho_sigma(x - y) exp(-w^2/2) mu(dy, dw)`: crowding
    /// weighted towards slow agents, so it sees the velocity distribution.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub kind: CouplingKind,
    pub strength: f64,
    pub sigma: f64,
}

impl Coupling {
    pub const NONE: Coupling = Coupling {
        kind: CouplingKind::None,
        strength: 0.0,
        sigma: 0.3,
    };

    pub fn is_active(&self) -> bool {
        self.kind != CouplingKind::None && self.strength != 0.0
    }

    /// Per-particle weight applied on top of the particle mass.
    #[inline]
    fn velocity_weight(&self, w: f64) -> f64 {
        match self.kind {
            CouplingKind::Joint => (-0.5 * w * w).exp(),
            _ => 1.0,
        }
    }

    /// Unscaled `F(x, m)` (no `strength` factor) by direct kernel summation.
    pub fn kernel_sum(&self, x: f64, mu: &ParticleEnsemble) -> f64 {
        if self.kind == CouplingKind::None {
            return 0.0;
        }
        mu.iter()
            .map(|(y, w, mass)| mass * self.velocity_weight(w) * gaussian(x - y, self.sigma))
            .sum()
    }

    fn kernel_sum_dx(&self, x: f64, mu: &ParticleEnsemble) -> f64 {
        if self.kind == CouplingKind::None {
            return 0.0;
        }
        mu.iter()
            .map(|(y, w, mass)| {
                let z = x - y;
                -mass * self.velocity_weight(w) * z / (self.sigma * self.sigma)
                    * gaussian(z, self.sigma)
            })
            .sum()
    }

    /// `sup_x F(x, m)` over all probability measures.
    pub fn kernel_max(&self) -> f64 {
        if self.kind == CouplingKind::None {
            0.0
        } else {
            1.0 / (self.sigma * (2.0 * PI).sqrt())
        }
    }

    /// Lipschitz constant of the kernel, which is also a d1-modulus constant
    /// for `F` (the velocity weight is 1-Lipschitz times a bounded kernel).
    pub fn kernel_lipschitz(&self) -> f64 {
        if self.kind == CouplingKind::None {
            0.0
        } else {
            // max |rho'| = e^{-1/2} / (sigma^2 sqrt(2 pi))
            (-0.5f64).exp() / (self.sigma * self.sigma * (2.0 * PI).sqrt())
        }
    }
}

#[inline]
pub fn gaussian(z: f64, sigma: f64) -> f64 {
    (-0.5 * (z / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// `F(., m)` tabulated on an axis with exact kernel values and slopes, read
/// back by cubic Hermite interpolation (so it is `C^1`). Constant outside the
/// axis.
#[derive(Debug, Clone)]
pub struct CouplingProfile {
    pub axis: Axis,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl CouplingProfile {
    pub fn from_ensemble(coupling: &Coupling, mu: &ParticleEnsemble, axis: Axis) -> Self {
        if coupling.kind == CouplingKind::None {
            return Self::zero(axis);
        }
        let sigma = coupling.sigma;
        let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
        let atoms: Vec<(f64, f64)> = mu
            .iter()
            .map(|(y, w, mass)| (y, mass * coupling.velocity_weight(w) * norm))
            .collect();
        let (mut values, mut slopes) = (Vec::with_capacity(axis.n), Vec::with_capacity(axis.n));
        for x in axis.nodes() {
            let (mut f, mut df) = (0.0, 0.0);
            for &(y, c) in &atoms {
                let z = (x - y) / sigma;
                let e = c * (-0.5 * z * z).exp();
                f += e;
                df -= e * z;
            }
            values.push(f);
            slopes.push(df / sigma);
        }
        CouplingProfile {
            axis,
            values,
            slopes,
        }
    }

    pub fn zero(axis: Axis) -> Self {
        CouplingProfile {
            axis,
            values: vec![0.0; axis.n],
            slopes: vec![0.0; axis.n],
        }
    }

    #[inline]
    fn hermite(&self, x: f64) -> (f64, f64, f64) {
        if !self.axis.contains(x) {
            let i = if x < self.axis.min { 0 } else { self.axis.n - 1 };
            return (self.values[i], 0.0, 0.0);
        }
        let h = self.axis.step();
        let (i, s) = self.axis.locate(x);
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let val = (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1;
        let d = ((6.0 * s2 - 6.0 * s) * p0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * p1
            + (3.0 * s2 - 2.0 * s) * m1)
            / h;
        let dd = ((12.0 * s - 6.0) * p0
            + (6.0 * s - 4.0) * m0
            + (-12.0 * s + 6.0) * p1
            + (6.0 * s - 2.0) * m1)
            / (h * h);
        (val, d, dd)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.hermite(x).0
    }

    #[inline]
    pub fn dx(&self, x: f64) -> f64 {
        self.hermite(x).1
    }

    #[inline]
    pub fn dxx(&self, x: f64) -> f64 {
        self.hermite(x).2
    }
}

/// How a cost function sees the population.
#[derive(Debug, Clone, Copy)]
pub enum MeasureRef<'a> {
    None,
    Particles(&'a ParticleEnsemble),
    Profile(&'a CouplingProfile),
}

/// A measure flow frozen into coupling profiles: one per flow time node for
/// the running cost and one for the terminal cost at the final time.
#[derive(Debug, Clone)]
pub struct FrozenCoupling {
    times: Vec<f64>,
    running: Vec<CouplingProfile>,
    terminal: Option<CouplingProfile>,
}

impl FrozenCoupling {
    /// No population dependence at all.
    pub fn none() -> Self {
        FrozenCoupling {
            times: Vec::new(),
            running: Vec::new(),
            terminal: None,
        }
    }

    /// Tabulate the couplings of `spec` and `g` along `flow` on `axis`.
    pub fn from_flow(
        spec: &LagrangianSpec,
        g: &TerminalCost,
        flow: &MeasureFlow,
        axis: Axis,
    ) -> Self {
        let running = if spec.coupling.is_active() {
            flow.ensembles
                .par_iter()
                .map(|mu| CouplingProfile::from_ensemble(&spec.coupling, mu, axis))
                .collect()
        } else {
            Vec::new()
        };
        let terminal = g
            .depends_on_measure()
            .then(|| CouplingProfile::from_ensemble(&g.smoothing(), flow.last(), axis));
        FrozenCoupling {
            times: flow.times.clone(),
            running,
            terminal,
        }
    }

    /// Axis covering `[x.min - pad, x.max + pad]` with spacing at most
    /// `sigma / 4`, wide enough for excursions of curves and foot points.
    pub fn profile_axis(x: Axis, sigma: f64) -> Axis {
        let pad = 2.0 + 4.0 * sigma;
        let (lo, hi) = (x.min - pad, x.max + pad);
        let n = ((hi - lo) / (0.25 * sigma)).ceil() as usize + 1;
        Axis::new(lo, hi, n.max(3))
    }

    /// Running coupling at the flow time node nearest to `t`.
    pub fn running_at(&self, t: f64) -> MeasureRef<'_> {
        if self.running.is_empty() {
            return MeasureRef::None;
        }
        let k = match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) if k == self.times.len() => k - 1,
            Err(k) => {
                if t - self.times[k - 1] <= self.times[k] - t {
                    k - 1
                } else {
                    k
                }
            }
        };
        MeasureRef::Profile(&self.running[k])
    }

    pub fn terminal(&self) -> MeasureRef<'_> {
        match &self.terminal {
            Some(p) => MeasureRef::Profile(p),
            None => MeasureRef::None,
        }
    }
}

/// The running cost `L0` together with the constants the estimates use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangianSpec {
    pub kinetic: Kinetic,
    pub potential: Potential,
    /// Additive constant, used to normalize `L0 >= 0`.
    pub offset: f64,
    pub coupling: Coupling,
    /// The structural constant `M0` (convexity, growth and gradient bounds).
    pub m0: f64,
    /// Bound of the coupling modulus `theta` on the working box.
    pub theta_bound: f64,
}

impl LagrangianSpec {
    /// `1/2 v^2 + stiffness/2 x^2 + kappa F(x, m)`.
    pub fn quadratic(stiffness: f64, coupling: Coupling, m0: f64) -> Self {
        LagrangianSpec {
            kinetic: Kinetic::HALF_SQUARE,
            potential: if stiffness == 0.0 {
                Potential::Zero
            } else {
                Potential::Quadratic { stiffness }
            },
            offset: 0.0,
            coupling,
            m0,
            theta_bound: 1.0,
        }
    }

    /// `1/4 v^4 + 1/2 v^2 + stiffness/2 x^2 + kappa F(x, m)`.
    pub fn quartic_regularized(stiffness: f64, coupling: Coupling, m0: f64) -> Self {
        LagrangianSpec {
            kinetic: Kinetic {
                quadratic: 1.0,
                quartic: 1.0,
            },
            ..Self::quadratic(stiffness, coupling, m0)
        }
    }

    /// `1/2 v^2 + k (1 - cos x) + kappa F(x, m)`.
    pub fn cosine(k: f64, coupling: Coupling, m0: f64) -> Self {
        LagrangianSpec {
            potential: Potential::Cosine { amplitude: -k },
            offset: k,
            ..Self::quadratic(0.0, coupling, m0)
        }
    }

    /// True for the `1/2 |v|^2 + L0(x, mu)` structure of the MFG-of-control
    /// setting.
    pub fn is_control_form(&self) -> bool {
        self.kinetic == Kinetic::HALF_SQUARE
    }

    pub fn is_decoupled(&self) -> bool {
        !self.coupling.is_active()
    }

    /// Coupling contribution `kappa F(x, m)`.
    #[inline]
    pub fn coupling_term(&self, x: f64, m: MeasureRef<'_>) -> f64 {
        if !self.coupling.is_active() {
            return 0.0;
        }
        self.coupling.strength
            * match m {
                MeasureRef::None => 0.0,
                MeasureRef::Particles(mu) => self.coupling.kernel_sum(x, mu),
                MeasureRef::Profile(p) => p.value(x),
            }
    }

    #[inline]
    fn coupling_dx(&self, x: f64, m: MeasureRef<'_>) -> f64 {
        if !self.coupling.is_active() {
            return 0.0;
        }
        self.coupling.strength
            * match m {
                MeasureRef::None => 0.0,
                MeasureRef::Particles(mu) => self.coupling.kernel_sum_dx(x, mu),
                MeasureRef::Profile(p) => p.dx(x),
            }
    }

    #[inline]
    fn coupling_dxx(&self, x: f64, m: MeasureRef<'_>) -> f64 {
        if !self.coupling.is_active() {
            return 0.0;
        }
        match m {
            MeasureRef::Profile(p) => self.coupling.strength * p.dxx(x),
            MeasureRef::Particles(mu) => {
                let h = 1e-4;
                (self.coupling_dx(x + h, MeasureRef::Particles(mu))
                    - self.coupling_dx(x - h, MeasureRef::Particles(mu)))
                    / (2.0 * h)
            }
            MeasureRef::None => 0.0,
        }
    }

    /// Position-only part `V(x) + offset + kappa F(x, m)`.
    #[inline]
    pub fn state_cost(&self, x: f64, m: MeasureRef<'_>) -> f64 {
        self.potential.value(x) + self.offset + self.coupling_term(x, m)
    }

    /// `L0(x, v, m)` without input validation, for inner loops.
    #[inline]
    pub fn l0(&self, x: f64, v: f64, m: MeasureRef<'_>) -> f64 {
        self.kinetic.value(v) + self.state_cost(x, m)
    }

    pub fn eval_l0(&self, x: f64, v: f64, m: MeasureRef<'_>) -> Result<f64> {
        if !x.is_finite() || !v.is_finite() {
            return Err(Error::invalid(format!("non-finite state (x={x}, v={v})")));
        }
        Ok(self.l0(x, v, m))
    }

    #[inline]
    pub fn dx_l0(&self, x: f64, _v: f64, m: MeasureRef<'_>) -> f64 {
        self.potential.dx(x) + self.coupling_dx(x, m)
    }

    #[inline]
    pub fn dxx_l0(&self, x: f64, _v: f64, m: MeasureRef<'_>) -> f64 {
        self.potential.dxx(x) + self.coupling_dxx(x, m)
    }

    #[inline]
    pub fn dv_l0(&self, _x: f64, v: f64, _m: MeasureRef<'_>) -> f64 {
        self.kinetic.dv(v)
    }

    #[inline]
    pub fn dvv_l0(&self, _x: f64, v: f64, _m: MeasureRef<'_>) -> f64 {
        self.kinetic.dvv(v)
    }

    /// Maximizer and value of `v -> -p v - L0(x, v, m)`.
    ///
    /// A 512-node scan of `[-V, V]` brackets the maximizer (V doubles until
    /// the argmax is interior), then Newton on `K'(v) = -p` polishes it.
    pub fn legendre_transform(&self, x: f64, p: f64, m: MeasureRef<'_>) -> Result<HamiltonianEval> {
        if !x.is_finite() || !p.is_finite() {
            return Err(Error::invalid(format!("non-finite input (x={x}, p={p})")));
        }
        let v_star = self.optimal_velocity(p)?;
        Ok(HamiltonianEval {
            h0: -p * v_star - self.l0(x, v_star, m),
            v_star,
        })
    }

    /// The optimizing velocity `v*` with `D_v L0(x, v*, m) = -p`. Only the
    /// kinetic part depends on `v`, so `v*` does not depend on `x` or `m`.
    pub fn optimal_velocity(&self, p: f64) -> Result<f64> {
        const NODES: usize = 512;
        let k = self.kinetic;
        if k.quadratic == 0.0 && k.quartic == 0.0 {
            return Err(Error::Unsupported(
                "Legendre transform of a velocity-independent Lagrangian".into(),
            ));
        }
        let mut vmax = 16.0;
        let mut start = 0.0;
        for _ in 0..40 {
            let h = 2.0 * vmax / (NODES - 1) as f64;
            let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
            for i in 0..NODES {
                let v = -vmax + h * i as f64;
                let phi = -p * v - k.value(v);
                if phi > best {
                    best = phi;
                    best_i = i;
                }
            }
            start = -vmax + h * best_i as f64;
            if best_i != 0 && best_i != NODES - 1 {
                break;
            }
            vmax *= 2.0;
        }

        let tol = 1e-10 * p.abs().max(1.0);
        let mut v = start;
        for _ in 0..50 {
            let r = k.dv(v) + p;
            if r.abs() < tol {
                return Ok(v);
            }
            let d = k.dvv(v);
            if d <= 0.0 {
                return Err(Error::Numerical {
                    msg: "Legendre transform: kinetic term not convex at iterate".into(),
                    best: v,
                });
            }
            v -= r / d;
        }
        if (k.dv(v) + p).abs() < tol {
            return Ok(v);
        }
        Err(Error::Numerical {
            msg: "Legendre transform: Newton did not converge in 50 steps".into(),
            best: v,
        })
    }
}

/// Result of [`LagrangianSpec::legendre_transform`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianEval {
    pub h0: f64,
    pub v_star: f64,
}

/// Map a spatial-gradient field `D_x u(t, x)` to the optimizing velocity
/// field `b(t, x) = v*(x, D_x u(t, x))`.
///
/// Characteristics are transported along `v*` itself (for the quadratic
/// kinetic term, `b = -D_x u`).
pub fn optimal_velocity_field(u_grad_x: &ValueField, spec: &LagrangianSpec) -> Result<ValueField> {
    let mut out = u_grad_x.clone();
    for p in out.values.iter_mut() {
        *p = spec.optimal_velocity(*p)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalShape {
    Zero,
    /// `slope * x`
    Linear { slope: f64 },
    /// `-amplitude exp(-(x - center)^2 / (2 width^2))`
    Well {
        amplitude: f64,
        center: f64,
        width: f64,
    },
}

/// `g(x, m) = shape(x) + congestion * (rho_sigma * m)(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminalCost {
    pub shape: TerminalShape,
    pub congestion: f64,
    pub sigma: f64,
}

impl Default for TerminalCost {
    fn default() -> Self {
        Self::ZERO
    }
}

impl TerminalCost {
    pub const ZERO: TerminalCost = TerminalCost {
        shape: TerminalShape::Zero,
        congestion: 0.0,
        sigma: 0.3,
    };

    pub fn linear(slope: f64) -> Self {
        TerminalCost {
            shape: TerminalShape::Linear { slope },
            ..Self::ZERO
        }
    }

    fn smoothing(&self) -> Coupling {
        Coupling {
            kind: CouplingKind::Marginal,
            strength: self.congestion,
            sigma: self.sigma,
        }
    }

    pub fn depends_on_measure(&self) -> bool {
        self.congestion != 0.0
    }

    fn shape_value(&self, x: f64) -> f64 {
        match self.shape {
            TerminalShape::Zero => 0.0,
            TerminalShape::Linear { slope } => slope * x,
            TerminalShape::Well {
                amplitude,
                center,
                width,
            } => -amplitude * (-0.5 * ((x - center) / width).powi(2)).exp(),
        }
    }

    fn shape_dx(&self, x: f64) -> f64 {
        match self.shape {
            TerminalShape::Zero => 0.0,
            TerminalShape::Linear { slope } => slope,
            TerminalShape::Well {
                amplitude,
                center,
                width,
            } => {
                let z = (x - center) / width;
                amplitude * z / width * (-0.5 * z * z).exp()
            }
        }
    }

    pub fn eval(&self, x: f64, m: MeasureRef<'_>) -> f64 {
        let c = self.smoothing();
        let f = if self.depends_on_measure() {
            match m {
                MeasureRef::None => 0.0,
                MeasureRef::Particles(mu) => c.kernel_sum(x, mu),
                MeasureRef::Profile(p) => p.value(x),
            }
        } else {
            0.0
        };
        self.shape_value(x) + self.congestion * f
    }

    pub fn dx(&self, x: f64, m: MeasureRef<'_>) -> f64 {
        let c = self.smoothing();
        let f = if self.depends_on_measure() {
            match m {
                MeasureRef::None => 0.0,
                MeasureRef::Particles(mu) => c.kernel_sum_dx(x, mu),
                MeasureRef::Profile(p) => p.dx(x),
            }
        } else {
            0.0
        };
        self.shape_dx(x) + self.congestion * f
    }

    /// Upper bound of `sup_x |D_x g(x, m)|` over the box `[-r, r]`.
    pub fn dg_bound(&self, r: f64) -> f64 {
        let shape = match self.shape {
            TerminalShape::Zero => 0.0,
            TerminalShape::Linear { slope } => slope.abs(),
            TerminalShape::Well {
                amplitude, width, ..
            } => amplitude.abs() / width * (-0.5f64).exp(),
        };
        let _ = r;
        shape + self.congestion.abs() * self.smoothing().kernel_lipschitz()
    }

    /// `sup_{|x| <= r} |g(x, m)|` bound, uniform in `m`.
    pub fn sup_bound(&self, r: f64) -> f64 {
        let shape = match self.shape {
            TerminalShape::Zero => 0.0,
            TerminalShape::Linear { slope } => slope.abs() * r,
            TerminalShape::Well { amplitude, .. } => amplitude.abs(),
        };
        shape + self.congestion.abs() * self.smoothing().kernel_max()
    }

    /// Modulus of `m -> g(x, m)` in d1: `omega_g(r) = |congestion| Lip(rho) r`.
    pub fn measure_modulus(&self, r: f64) -> f64 {
        self.congestion.abs() * self.smoothing().kernel_lipschitz() * r
    }

    /// Check `|g(x, m1) - g(x, m2)| <= omega_g(d1(m1, m2))` at the given
    /// positions for every pair; returns the worst margin.
    pub fn modulus_margin(
        &self,
        xs: &[f64],
        pairs: &[(ParticleEnsemble, ParticleEnsemble)],
    ) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for (a, b) in pairs {
            let d = wasserstein1_1d(&Marginal::from(a), &Marginal::from(b))?;
            for &x in xs {
                let diff =
                    (self.eval(x, MeasureRef::Particles(a)) - self.eval(x, MeasureRef::Particles(b))).abs();
                worst = worst.min(self.measure_modulus(d) - diff);
            }
        }
        Ok(worst)
    }
}

/// Compact working set for the audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditBox {
    pub x: (f64, f64),
    pub v: (f64, f64),
}

impl AuditBox {
    pub fn square(r: f64) -> Self {
        AuditBox {
            x: (-r, r),
            v: (-r, r),
        }
    }
}

/// Worst-case margins (bound minus value; negative means violated).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionAudit {
    pub convexity: f64,
    pub growth_lower: f64,
    pub growth_upper: f64,
    pub dx_bound: f64,
    pub dv_bound: f64,
    pub nonnegativity: f64,
    /// `M0 - max(1/2, 1/2 ||Dg||)`; only present when a terminal cost is audited.
    pub terminal: Option<f64>,
}

impl AssumptionAudit {
    pub const FAIL_BELOW: f64 = -1e-8;

    pub fn worst(&self) -> f64 {
        [
            self.convexity,
            self.growth_lower,
            self.growth_upper,
            self.dx_bound,
            self.dv_bound,
            self.nonnegativity,
            self.terminal.unwrap_or(f64::INFINITY),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self) -> bool {
        self.worst() >= Self::FAIL_BELOW
    }
}

/// Sample `samples x samples` lattice points of the box and report the worst
/// margin of every structural inequality. The coupling enters `L0` affinely
/// with `0 <= F <= max F` and `|F'| <= Lip`, so both extremes are audited.
pub fn audit_assumptions(
    spec: &LagrangianSpec,
    terminal: Option<&TerminalCost>,
    bx: AuditBox,
    samples: usize,
) -> AssumptionAudit {
    let samples = samples.max(2);
    let m0 = spec.m0;
    let h = 1e-3;
    let couplings = if spec.coupling.is_active() {
        vec![0.0, spec.coupling.strength * spec.coupling.kernel_max()]
    } else {
        vec![0.0]
    };
    let slope = spec.coupling.strength.abs() * spec.coupling.kernel_lipschitz();
    let lerp = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (samples - 1) as f64;

    let mut a = AssumptionAudit {
        convexity: f64::INFINITY,
        growth_lower: f64::INFINITY,
        growth_upper: f64::INFINITY,
        dx_bound: f64::INFINITY,
        dv_bound: f64::INFINITY,
        nonnegativity: f64::INFINITY,
        terminal: terminal.map(|g| m0 - f64::max(0.5, 0.5 * g.dg_bound(bx.x.1.abs().max(bx.x.0.abs())))),
    };
    for i in 0..samples {
        let x = lerp(bx.x, i);
        for j in 0..samples {
            let v = lerp(bx.v, j);
            let k = &spec.kinetic;
            let second = (k.value(v + h) - 2.0 * k.value(v) + k.value(v - h)) / (h * h);
            a.convexity = a.convexity.min(second - 1.0 / m0);
            for &c in &couplings {
                let l = k.value(v) + spec.potential.value(x) + spec.offset + c;
                a.growth_lower = a.growth_lower.min(l - (v * v / m0 - m0));
                a.growth_upper = a.growth_upper.min(m0 * (1.0 + v * v) - l);
                a.nonnegativity = a.nonnegativity.min(l);
            }
            let dx = spec.potential.dx(x).abs() + slope;
            a.dx_bound = a.dx_bound.min(m0 * (1.0 + v * v) - dx);
            a.dv_bound = a.dv_bound.min(m0 * (1.0 + v.abs()) - k.dv(v).abs());
        }
    }
    a
}
