//! Weighted particle ensembles on phase space `(x, v)`, their flows in time,
//! and Wasserstein-1 distances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::grid::Axis;
use crate::{ot, Error, Result};

/// Tolerance on the total mass of an ensemble.
pub const MASS_TOL: f64 = 1e-12;

/// Largest support (per side) solved exactly by [`wasserstein1_joint`].
pub const N_EXACT: usize = 2000;
/// Projections used by the sliced fallback of [`wasserstein1_joint`].
pub const SLICES: usize = 64;

/// A probability measure on phase space, stored as weighted atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>, velocities: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mu = ParticleEnsemble {
            positions,
            velocities,
            weights,
        };
        mu.validate()?;
        Ok(mu)
    }

    /// Equal weights `1/n`.
    pub fn uniform(positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, velocities, vec![1.0 / n as f64; n])
    }

    pub fn dirac(x: f64, v: f64) -> Self {
        ParticleEnsemble {
            positions: vec![x],
            velocities: vec![v],
            weights: vec![1.0],
        }
    }

    /// Uniform weights on the cell centres of an `nx x nv` lattice over the box.
    pub fn lattice(nx: usize, nv: usize, xbox: (f64, f64), vbox: (f64, f64)) -> Self {
        let n = nx * nv;
        let mut positions = Vec::with_capacity(n);
        let mut velocities = Vec::with_capacity(n);
        for i in 0..nx {
            let x = xbox.0 + (xbox.1 - xbox.0) * (i as f64 + 0.5) / nx as f64;
            for j in 0..nv {
                positions.push(x);
                velocities.push(vbox.0 + (vbox.1 - vbox.0) * (j as f64 + 0.5) / nv as f64);
            }
        }
        ParticleEnsemble {
            positions,
            velocities,
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Lattice with `count` particles, factored as the most nearly square
    /// `nx * nv = count` (`nx >= nv`).
    pub fn lattice_count(count: usize, xbox: (f64, f64), vbox: (f64, f64)) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("particle count must be positive"));
        }
        let mut nv = (count as f64).sqrt().floor() as usize;
        while !count.is_multiple_of(nv) {
            nv -= 1;
        }
        Ok(Self::lattice(count / nv, nv, xbox, vbox))
    }

    /// `count` i.i.d. standard normal samples per coordinate, scaled to the
    /// half-widths of the box and rejected outside it.
    pub fn gaussian(count: usize, seed: u64, xbox: (f64, f64), vbox: (f64, f64)) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("particle count must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |(lo, hi): (f64, f64)| loop {
            let z: f64 = rng.sample(StandardNormal);
            let s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * z / 2.0;
            if s >= lo && s <= hi {
                break s;
            }
        };
        let mut positions = Vec::with_capacity(count);
        let mut velocities = Vec::with_capacity(count);
        for _ in 0..count {
            positions.push(draw(xbox));
            velocities.push(draw(vbox));
        }
        Self::uniform(positions, velocities)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::invalid("empty ensemble"));
        }
        if self.velocities.len() != n || self.weights.len() != n {
            return Err(Error::invalid("ensemble arrays differ in length"));
        }
        if let Some(i) = (0..n).find(|&i| {
            !self.positions[i].is_finite() || !self.velocities[i].is_finite() || !self.weights[i].is_finite()
        }) {
            return Err(Error::invalid(format!("particle {i} has a non-finite coordinate")));
        }
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("negative particle weight"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `(x, v, w)` triples.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.positions
            .iter()
            .zip(&self.velocities)
            .zip(&self.weights)
            .map(|((&x, &v), &w)| (x, v, w))
    }

    pub fn marginal_x(&self) -> Marginal {
        Marginal::from(self)
    }

    /// Image under `map`; weights are carried over unchanged.
    pub fn pushforward<F>(&self, map: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> (f64, f64),
    {
        let mut positions = Vec::with_capacity(self.len());
        let mut velocities = Vec::with_capacity(self.len());
        for (i, (x, v, _)) in self.iter().enumerate() {
            let (y, w) = map(x, v);
            if !y.is_finite() || !w.is_finite() {
                return Err(Error::Transport {
                    t: f64::NAN,
                    particle: i,
                    detail: format!("push-forward image ({y}, {w}) of ({x}, {v}) is not finite"),
                });
            }
            positions.push(y);
            velocities.push(w);
        }
        Ok(ParticleEnsemble {
            positions,
            velocities,
            weights: self.weights.clone(),
        })
    }

    /// `int |x|^2 + |v|^2 dmu`.
    pub fn second_moment(&self) -> f64 {
        self.iter().map(|(x, v, w)| w * (x * x + v * v)).sum()
    }

    /// Particle-wise convex combination `(1 - lambda) self + lambda other` of
    /// the coordinates (both ensembles must be images of the same atoms).
    pub fn mix(&self, other: &Self, lambda: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::invalid("mixing ensembles of different sizes"));
        }
        let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(&p, &q)| (1.0 - lambda) * p + lambda * q)
                .collect()
        };
        Ok(ParticleEnsemble {
            positions: lerp(&self.positions, &other.positions),
            velocities: lerp(&self.velocities, &other.velocities),
            weights: self.weights.clone(),
        })
    }

    /// Smallest box `(xmin, xmax, vmin, vmax)` containing the support.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let fold = |s: &[f64]| {
            s.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &z| (lo.min(z), hi.max(z)))
        };
        let (x0, x1) = fold(&self.positions);
        let (v0, v1) = fold(&self.velocities);
        (x0, x1, v0, v1)
    }
}

/// A probability measure on the line (position marginal).
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Marginal {
    pub fn new(positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("empty marginal"));
        }
        if positions.len() != weights.len() {
            return Err(Error::invalid("marginal arrays differ in length"));
        }
        Ok(Marginal { positions, weights })
    }

    pub fn second_moment(&self) -> f64 {
        self.positions
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * x * x)
            .sum()
    }

    /// Atoms sorted by position, for repeated distance evaluations.
    pub fn sorted(&self) -> SortedMarginal {
        let mut atoms: Vec<(f64, f64)> = self
            .positions
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        SortedMarginal { atoms }
    }
}

impl From<&ParticleEnsemble> for Marginal {
    fn from(mu: &ParticleEnsemble) -> Self {
        Marginal {
            positions: mu.positions.clone(),
            weights: mu.weights.clone(),
        }
    }
}

/// Position-sorted atoms `(x, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedMarginal {
    atoms: Vec<(f64, f64)>,
}

impl SortedMarginal {
    /// `int |F_a - F_b| dx`, which equals d1 on the line.
    pub fn distance(&self, other: &SortedMarginal) -> f64 {
        let (a, b) = (&self.atoms, &other.atoms);
        let (mut i, mut j) = (0, 0);
        let (mut fa, mut fb) = (0.0f64, 0.0f64);
        let mut last = f64::NAN;
        let mut total = 0.0;
        while i < a.len() || j < b.len() {
            let x = match (a.get(i), b.get(j)) {
                (Some(p), Some(q)) => p.0.min(q.0),
                (Some(p), None) => p.0,
                (None, Some(q)) => q.0,
                (None, None) => unreachable!(),
            };
            if !last.is_nan() {
                total += (fa - fb).abs() * (x - last);
            }
            while i < a.len() && a[i].0 == x {
                fa += a[i].1;
                i += 1;
            }
            while j < b.len() && b[j].0 == x {
                fb += b[j].1;
                j += 1;
            }
            last = x;
        }
        total
    }
}

/// Exact d1 between two measures on the line via their CDFs.
pub fn wasserstein1_1d(a: &Marginal, b: &Marginal) -> Result<f64> {
    if a.positions.is_empty() || b.positions.is_empty() {
        return Err(Error::invalid("d1 of an empty measure"));
    }
    Ok(a.sorted().distance(&b.sorted()))
}

/// A joint d1 value, flagged when computed by the sliced approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointDistance {
    pub value: f64,
    pub approximate: bool,
}

/// d1 on phase space with ground metric `|x - x'| + |v - v'|`.
///
/// Exact (network simplex) when both supports have at most [`N_EXACT`]
/// atoms, otherwise the mean over [`SLICES`] seeded random directions of the
/// 1D distance between projections (flagged approximate).
pub fn wasserstein1_joint(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<JointDistance> {
    wasserstein1_joint_with(a, b, N_EXACT, SLICES)
}

pub fn wasserstein1_joint_with(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    n_exact: usize,
    slices: usize,
) -> Result<JointDistance> {
    for (name, mu) in [("first", a), ("second", b)] {
        if mu.is_empty() {
            return Err(Error::invalid(format!("{name} ensemble is empty")));
        }
        if mu.velocities.len() != mu.positions.len() || mu.weights.len() != mu.positions.len() {
            return Err(Error::invalid(format!(
                "{name} ensemble mixes dimensions (positions, velocities and weights differ in length)"
            )));
        }
    }
    if a.len() <= n_exact && b.len() <= n_exact {
        let value = ot::transport_cost(&a.weights, &b.weights, |i, j| {
            (a.positions[i] - b.positions[j]).abs() + (a.velocities[i] - b.velocities[j]).abs()
        })?;
        return Ok(JointDistance {
            value,
            approximate: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut total = 0.0;
    for _ in 0..slices {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (c, s) = (theta.cos(), theta.sin());
        let project = |mu: &ParticleEnsemble| Marginal {
            positions: mu.iter().map(|(x, v, _)| c * x + s * v).collect(),
            weights: mu.weights.clone(),
        };
        total += wasserstein1_1d(&project(a), &project(b))?;
    }
    Ok(JointDistance {
        value: total / slices as f64,
        approximate: true,
    })
}

/// Particle ensembles at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    pub times: Vec<f64>,
    pub ensembles: Vec<ParticleEnsemble>,
}

impl MeasureFlow {
    pub fn new(times: Vec<f64>, ensembles: Vec<ParticleEnsemble>) -> Result<Self> {
        let flow = MeasureFlow { times, ensembles };
        flow.validate()?;
        Ok(flow)
    }

    /// The same measure at every time.
    pub fn constant(times: Vec<f64>, mu: &ParticleEnsemble) -> Self {
        let ensembles = vec![mu.clone(); times.len()];
        MeasureFlow { times, ensembles }
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.ensembles.len() {
            return Err(Error::invalid("flow needs one ensemble per time"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("flow times must increase"));
        }
        let first = &self.ensembles[0];
        for mu in &self.ensembles {
            mu.validate()?;
            if mu.weights != first.weights {
                return Err(Error::invalid("flow weights change in time"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the time node closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        match self
            .times
            .binary_search_by(|s| s.total_cmp(&t))
        {
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
        }
    }

    pub fn at(&self, t: f64) -> &ParticleEnsemble {
        &self.ensembles[self.nearest_index(t)]
    }

    pub fn first(&self) -> &ParticleEnsemble {
        &self.ensembles[0]
    }

    pub fn last(&self) -> &ParticleEnsemble {
        &self.ensembles[self.ensembles.len() - 1]
    }

    /// Sorted position marginals, one per time node.
    pub fn sorted_marginals(&self) -> Vec<SortedMarginal> {
        self.ensembles.iter().map(|mu| mu.marginal_x().sorted()).collect()
    }

    /// Trajectory-space mixing of two flows of the same atoms.
    pub fn mix(&self, other: &MeasureFlow, lambda: f64) -> Result<MeasureFlow> {
        if self.times != other.times {
            return Err(Error::invalid("mixing flows on different time grids"));
        }
        let ensembles = self
            .ensembles
            .iter()
            .zip(&other.ensembles)
            .map(|(a, b)| a.mix(b, lambda))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasureFlow {
            times: self.times.clone(),
            ensembles,
        })
    }

    /// `sup_t d1(m_t, m'_t)` over common time nodes (position marginals).
    pub fn sup_marginal_distance(&self, other: &MeasureFlow) -> Result<f64> {
        if self.times.len() != other.times.len() {
            return Err(Error::invalid("comparing flows on different time grids"));
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.ensembles.iter().zip(&other.ensembles) {
            worst = worst.max(wasserstein1_1d(&a.marginal_x(), &b.marginal_x())?);
        }
        Ok(worst)
    }

    /// `sup_t sum_i w_i (|x_i - x'_i| + |v_i - v'_i|)`: the cost of the
    /// identity pairing of atoms, an upper bound on the joint d1.
    pub fn sup_pairing_distance(&self, other: &MeasureFlow) -> Result<f64> {
        if self.times.len() != other.times.len() {
            return Err(Error::invalid("comparing flows on different time grids"));
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.ensembles.iter().zip(&other.ensembles) {
            if a.len() != b.len() {
                return Err(Error::invalid("pairing ensembles of different sizes"));
            }
            let d: f64 = (0..a.len())
                .map(|i| {
                    a.weights[i]
                        * ((a.positions[i] - b.positions[i]).abs()
                            + (a.velocities[i] - b.velocities[i]).abs())
                })
                .sum();
            worst = worst.max(d);
        }
        Ok(worst)
    }
}

/// A density sampled on an axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl GridDensity {
    /// Trapezoid integral.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.axis.step())
    }
}

pub(crate) fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

/// Gaussian kernel density estimate of `m` on `axis`, renormalized to unit
/// trapezoid mass.
pub fn smoothed_density(m: &Marginal, sigma: f64, axis: Axis) -> Result<GridDensity> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {sigma}")));
    }
    let values: Vec<f64> = axis
        .nodes()
        .iter()
        .map(|&x| {
            m.positions
                .iter()
                .zip(&m.weights)
                .map(|(&y, &w)| w * crate::model::gaussian(x - y, sigma))
                .sum()
        })
        .collect();
    let mut d = GridDensity { axis, values };
    let mass = d.mass();
    if mass > 0.0 {
        d.values.iter_mut().for_each(|v| *v /= mass);
    }
    Ok(d)
}
