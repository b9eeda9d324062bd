//! Deterministic tensor-product quadrature on axis-aligned boxes.

use serde::{Deserialize, Serialize};

use super::AxisBox;
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    MidpointGrid,
    GaussLegendreTensor,
}

/// A quadrature scheme together with its points-per-dimension resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub scheme: Scheme,
    pub resolution: usize,
}

impl QuadratureRule {
    pub const fn midpoint(resolution: usize) -> Self {
        Self {
            scheme: Scheme::MidpointGrid,
            resolution,
        }
    }

    pub const fn gauss_legendre(resolution: usize) -> Self {
        Self {
            scheme: Scheme::GaussLegendreTensor,
            resolution,
        }
    }

    /// Same scheme at `factor` times the resolution.
    pub fn refined(self, factor: usize) -> Self {
        Self {
            resolution: self.resolution * factor,
            ..self
        }
    }

    pub fn on_box(&self, region: &AxisBox) -> Result<Quadrature> {
        Quadrature::on_box(region, self.scheme, self.resolution)
    }
}

/// Nodes and weights realizing `∫_region f(y) dy ≈ Σ w_q f(y_q)`.
///
/// Weights are nonnegative and sum to the Lebesgue volume of the region.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub scheme: Scheme,
    pub resolution: usize,
}

impl Quadrature {
    pub fn on_box(region: &AxisBox, scheme: Scheme, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return domain("quadrature resolution must be at least 1");
        }
        if !region.is_bounded() {
            return domain("quadrature requires a bounded region");
        }
        let (unit_nodes, unit_weights) = match scheme {
            Scheme::MidpointGrid => midpoint_unit(resolution),
            Scheme::GaussLegendreTensor => gauss_legendre_unit(resolution),
        };
        let dim = region.dim();
        let total = resolution.pow(dim as u32);
        let mut nodes = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let mut node = Vec::with_capacity(dim);
            let mut w = 1.0;
            for (d, &i) in idx.iter().enumerate() {
                let (lo, hi) = (region.lower[d], region.upper[d]);
                node.push(lo + (hi - lo) * unit_nodes[i]);
                w *= (hi - lo) * unit_weights[i];
            }
            nodes.push(node);
            weights.push(w);
            // row-major odometer, last dimension fastest
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < resolution {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self {
            nodes,
            weights,
            scheme,
            resolution,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| w * f(y))
            .sum()
    }
}

fn midpoint_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / n as f64;
    ((0..n).map(|i| (i as f64 + 0.5) * h).collect(), vec![h; n])
}

/// Gauss–Legendre nodes and weights mapped to [0, 1].
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
