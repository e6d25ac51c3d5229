//! Uniform one-dimensional axes shared by the grid solvers.

use serde::{Deserialize, Serialize};

/// `n` equispaced nodes on `[min, max]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Self {
        debug_assert!(n >= 2 && max > min);
        Axis { min, max, n }
    }

    /// Symmetric axis `[-r, r]`.
    pub fn symmetric(r: f64, n: usize) -> Self {
        Axis::new(-r, r, n)
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.max
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.n - 1) as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    /// Cell index and fractional offset of `x`, clamped into the axis. The
    /// index is at most `n - 2` so `i + 1` is always a valid node.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = (self.clamp(x) - self.min) / self.step();
        let i = (s.floor() as usize).min(self.n - 2);
        (i, (s - i as f64).clamp(0.0, 1.0))
    }

    /// Index of the node closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let s = (self.clamp(x) - self.min) / self.step();
        (s.round() as usize).min(self.n - 1)
    }

    /// Halve the spacing: `2n - 1` nodes on the same interval.
    pub fn refined(&self) -> Self {
        Axis::new(self.min, self.max, 2 * self.n - 1)
    }
}
