//! Tensor-product Gauss–Legendre rules and the discrete `L²_q` inner product.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[a₁,b₁]×…×[a_d,b_d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::config(format!(
                "box bounds must be nonempty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !a.is_finite() || !b.is_finite() || a >= b {
                return Err(Error::config(format!(
                    "invalid bounds on axis {i}: [{a}, {b}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit cube `[0,1]^d`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (a, b))| *x >= *a && *x <= *b)
    }

    pub fn clamp(&self, point: &mut [f64]) {
        for (x, (a, b)) in point.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*a, *b);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A tensor-product Gauss–Legendre rule on a box.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    domain: BoxDomain,
    points_per_axis: usize,
    /// `n_nodes × d`
    nodes: DMatrix<f64>,
    weights: DVector<f64>,
}

impl QuadratureRule {
    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn nodes(&self) -> &DMatrix<f64> {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        self.nodes.row(i).iter().copied().collect()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// `Σ wᵢ h(xᵢ)`.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut h: F) -> f64 {
        let mut buf = vec![0.0; self.dim()];
        let mut acc = 0.0;
        for i in 0..self.len() {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = self.nodes[(i, k)];
            }
            acc += self.weights[i] * h(&buf);
        }
        acc
    }
}

/// Builds the tensor-product Gauss–Legendre rule with `points_per_axis` nodes
/// per axis. Exact for per-axis polynomial degree `≤ 2·points_per_axis − 1`.
pub fn gauss_legendre_rule(points_per_axis: usize, domain: &BoxDomain) -> Result<QuadratureRule> {
    if points_per_axis < 2 {
        return Err(Error::config(format!(
            "need at least 2 quadrature points per axis, got {points_per_axis}"
        )));
    }
    let d = domain.dim();
    let (ref_nodes, ref_weights) = gauss_legendre_1d(points_per_axis);
    let total = points_per_axis
        .checked_pow(d as u32)
        .ok_or_else(|| Error::config("quadrature grid too large"))?;
    let mut nodes = DMatrix::zeros(total, d);
    let mut weights = DVector::from_element(total, 1.0);
    let half: Vec<f64> = domain.widths().iter().map(|w| 0.5 * w).collect();
    for idx in 0..total {
        let mut rem = idx;
        // last axis varies fastest
        for axis in (0..d).rev() {
            let k = rem % points_per_axis;
            rem /= points_per_axis;
            let mid = domain.lower()[axis] + half[axis];
            nodes[(idx, axis)] = mid + half[axis] * ref_nodes[k];
            weights[idx] *= half[axis] * ref_weights[k];
        }
    }
    Ok(QuadratureRule {
        domain: domain.clone(),
        points_per_axis,
        nodes,
        weights,
    })
}

/// A `q`-variate function sampled on the nodes of a quadrature rule.
#[derive(Clone, Debug)]
pub struct GridFunction {
    values: DMatrix<f64>,
    rule: Arc<QuadratureRule>,
}

impl GridFunction {
    pub fn new(values: DMatrix<f64>, rule: Arc<QuadratureRule>) -> Result<Self> {
        if values.nrows() != rule.len() {
            return Err(Error::dim(format!(
                "grid function has {} rows but rule has {} nodes",
                values.nrows(),
                rule.len()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::dim("grid function needs q >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("grid function has non-finite values".into()));
        }
        Ok(Self { values, rule })
    }

    /// Samples `f` at every node of `rule`.
    pub fn from_fn<F>(rule: Arc<QuadratureRule>, q: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut values = DMatrix::zeros(rule.len(), q);
        for i in 0..rule.len() {
            let out = f(&rule.node(i));
            if out.len() != q {
                return Err(Error::dim(format!("expected {q} outputs, got {}", out.len())));
            }
            for (k, v) in out.into_iter().enumerate() {
                values[(i, k)] = v;
            }
        }
        Self::new(values, rule)
    }

    pub fn zeros(rule: Arc<QuadratureRule>, q: usize) -> Self {
        Self {
            values: DMatrix::zeros(rule.len(), q),
            rule,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn rule(&self) -> &Arc<QuadratureRule> {
        &self.rule
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn norm(&self) -> f64 {
        inner_product_unchecked(self, self).max(0.0).sqrt()
    }

    /// `a·self + b·other`, keeping the rule.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> Result<GridFunction> {
        check_compatible(self, other)?;
        Ok(GridFunction {
            values: &self.values * a + &other.values * b,
            rule: self.rule.clone(),
        })
    }

    pub(crate) fn same_rule(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.rule, &other.rule) || *self.rule == *other.rule
    }
}

fn check_compatible(f: &GridFunction, g: &GridFunction) -> Result<()> {
    if !f.same_rule(g) {
        return Err(Error::dim("grid functions live on different quadrature rules"));
    }
    if f.q() != g.q() {
        return Err(Error::dim(format!(
            "grid functions have different output dimension ({} vs {})",
            f.q(),
            g.q()
        )));
    }
    Ok(())
}

/// `⟨f, g⟩ = Σ_k Σ_i wᵢ f_k(xᵢ) g_k(xᵢ)`.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    check_compatible(f, g)?;
    Ok(inner_product_unchecked(f, g))
}

pub(crate) fn inner_product_unchecked(f: &GridFunction, g: &GridFunction) -> f64 {
    weighted_inner(f.rule.weights(), &f.values, &g.values)
}

/// `Σ_k Σ_i wᵢ a[i,k] b[i,k]` for node-major matrices.
fn weighted_inner(w: &DVector<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += w[i] * a[(i, k)] * b[(i, k)];
        }
    }
    acc
}
