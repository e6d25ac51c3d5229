//! JSON run configuration. Every field has a default and unknown keys are
//! rejected, so a typo in a sweep file fails loudly instead of silently
//! falling back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::SweepPlan;
use crate::hjb::{ControlSet, PhaseGrid};
use crate::measures::ParticleEnsemble;
use crate::mfg::{Problem, SolutionKind, SolverOptions};
use crate::model::{Coupling, CouplingKind, LagrangianSpec, TerminalCost};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Catalog {
    Quadratic,
    Quartic,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub catalog: Catalog,
    /// Potential strength: stiffness for the polynomial models, `k` for the
    /// cosine model.
    pub kappa_pot: f64,
    pub kappa_c: f64,
    pub coupling: CouplingKind,
    pub sigma: f64,
    pub m0: f64,
    pub theta_bound: f64,
    pub terminal: TerminalCost,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            catalog: Catalog::Quadratic,
            kappa_pot: 1.0,
            kappa_c: 0.5,
            coupling: CouplingKind::Marginal,
            sigma: 0.3,
            m0: 10.0,
            theta_bound: 1.0,
            terminal: TerminalCost::ZERO,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> LagrangianSpec {
        let coupling = Coupling {
            kind: self.coupling,
            strength: self.kappa_c,
            sigma: self.sigma,
        };
        let base = match self.catalog {
            Catalog::Quadratic => LagrangianSpec::quadratic(self.kappa_pot, coupling, self.m0),
            Catalog::Quartic => LagrangianSpec::quartic_regularized(self.kappa_pot, coupling, self.m0),
            Catalog::Cosine => LagrangianSpec::cosine(self.kappa_pot, coupling, self.m0),
        };
        LagrangianSpec {
            theta_bound: self.theta_bound,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub r_x: f64,
    pub r_v: f64,
    pub n_x: usize,
    pub n_v: usize,
    pub n_t: usize,
    /// Acceleration controls (odd).
    pub n_a: usize,
    pub a_max: f64,
    /// Velocity controls of the limit solvers (odd).
    pub n_b: usize,
    pub t_final: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            r_x: 3.0,
            r_v: 4.0,
            n_x: 101,
            n_v: 81,
            n_t: 201,
            n_a: 41,
            a_max: 8.0,
            n_b: 161,
            t_final: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Lattice,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub kind: MeasureKind,
    pub particles: usize,
    pub x_box: [f64; 2],
    pub v_box: [f64; 2],
    pub seed: u64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            kind: MeasureKind::Lattice,
            particles: 2000,
            x_box: [-1.0, 1.0],
            v_box: [-1.0, 1.0],
            seed: 0,
        }
    }
}

impl MeasureConfig {
    pub fn build(&self) -> Result<ParticleEnsemble> {
        let (xb, vb) = ((self.x_box[0], self.x_box[1]), (self.v_box[0], self.v_box[1]));
        match self.kind {
            MeasureKind::Lattice => ParticleEnsemble::lattice_count(self.particles, xb, vb),
            MeasureKind::Gaussian => ParticleEnsemble::gaussian(self.particles, self.seed, xb, vb),
        }
    }
}

/// Per-rung override of the Picard budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RungOverride {
    pub eps: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ladder: Vec<f64>,
    /// `(t, x, v)` points at which both value functions are reported.
    pub probes: Vec<[f64; 3]>,
    /// Half-width of the evaluation box.
    pub r: f64,
    /// Limit system to compare against; by default the MFG of control for a
    /// joint coupling and the classical limit otherwise.
    pub limit: Option<SolutionKind>,
    pub overrides: Vec<RungOverride>,
    /// Re-solve on a halved grid to measure the discretization floor.
    pub refinement: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let mut probes = Vec::new();
        for x in [-0.5, 0.0, 0.5] {
            for v in [-0.5, 0.0, 0.5] {
                probes.push([0.0, x, v]);
            }
        }
        SweepConfig {
            ladder: vec![0.5, 0.2, 0.1, 0.05, 0.02, 0.01],
            probes,
            r: 2.0,
            limit: None,
            overrides: Vec::new(),
            refinement: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write every `time_stride`-th time slice (the last one always).
    pub time_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { time_stride: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub measure: MeasureConfig,
    pub solver: SolverOptions,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive and finite, got {x}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        positive("model.m0", m.m0)?;
        positive("model.sigma", m.sigma)?;
        positive("model.terminal.sigma", m.terminal.sigma)?;
        if !(m.kappa_c >= 0.0 && m.kappa_pot >= 0.0 && m.theta_bound >= 0.0 && m.terminal.congestion >= 0.0) {
            return Err(Error::config(
                "model strengths, theta_bound and terminal congestion must be nonnegative",
            ));
        }
        let g = &self.grid;
        positive("grid.r_x", g.r_x)?;
        positive("grid.r_v", g.r_v)?;
        positive("grid.a_max", g.a_max)?;
        positive("grid.t_final", g.t_final)?;
        for (name, n) in [("grid.n_a", g.n_a), ("grid.n_b", g.n_b)] {
            if n < 3 || n % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd and at least 3, got {n}")));
            }
        }
        PhaseGrid::new(g.t_final, g.n_t, g.r_x, g.n_x, g.r_v, g.n_v)?;
        let mc = &self.measure;
        if mc.particles == 0 {
            return Err(Error::config("measure.particles must be positive"));
        }
        let inside = |b: [f64; 2], r: f64| b[0] < b[1] && b[0] >= -r && b[1] <= r;
        if !inside(mc.x_box, g.r_x) || !inside(mc.v_box, g.r_v) {
            return Err(Error::config("measure boxes must be nonempty and lie inside the grid box"));
        }
        let s = &self.solver;
        if !(s.lambda > 0.0 && s.lambda <= 1.0) {
            return Err(Error::config(format!("solver.lambda must lie in (0, 1], got {}", s.lambda)));
        }
        positive("solver.tol_fp", s.tol_fp)?;
        positive("solver.inner_step", s.inner_step)?;
        if s.max_iter == 0 {
            return Err(Error::config("solver.max_iter must be positive"));
        }
        if self.output.time_stride == 0 {
            return Err(Error::config("output.time_stride must be positive"));
        }
        self.sweep_plan()?;
        Ok(())
    }

    pub fn spec(&self) -> LagrangianSpec {
        self.model.spec()
    }

    pub fn problem(&self) -> Result<Problem> {
        let g = &self.grid;
        Ok(Problem {
            spec: self.spec(),
            terminal: self.model.terminal,
            grid: PhaseGrid::new(g.t_final, g.n_t, g.r_x, g.n_x, g.r_v, g.n_v)?,
            n_a: g.n_a,
            a_max: g.a_max,
            velocity_controls: ControlSet::velocity(g.n_b, g.r_v)?,
            mu0: self.measure.build()?,
            solver: self.solver,
        })
    }

    pub fn default_limit(&self) -> SolutionKind {
        self.sweep.limit.unwrap_or(match self.model.coupling {
            CouplingKind::Joint => SolutionKind::MfgOfControl,
            _ => SolutionKind::ClassicalLimit,
        })
    }

    pub fn sweep_plan(&self) -> Result<SweepPlan> {
        let s = &self.sweep;
        let mut plan = SweepPlan::new(s.ladder.clone(), s.probes.clone(), s.r, self.default_limit())?;
        plan.overrides = s.overrides.iter().map(|o| (o.eps, o.max_iter)).collect();
        plan.refinement = s.refinement;
        Ok(plan)
    }
}
