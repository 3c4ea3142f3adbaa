//! Trait space discretization and quadrature.
//!
//! Every integral over the trait space becomes a weighted sum over the nodes
//! of a [`TraitDomain`]. Interval domains use the composite trapezoid rule on
//! a uniform grid; discrete domains carry user-supplied subset measures.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    Interval { lower: f64, upper: f64 },
    Discrete { labels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraitDomain {
    kind: DomainKind,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TraitDomain {
    /// Uniform grid of `n` nodes on `[lower, upper]` with trapezoid weights.
    pub fn interval(lower: f64, upper: f64, n: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) {
            return Err(Error::InvalidDomain("interval endpoints must be finite"));
        }
        if upper <= lower {
            return Err(Error::InvalidDomain("upper endpoint must exceed lower"));
        }
        if n < 2 {
            return Err(Error::InvalidDomain("interval grid needs at least 2 nodes"));
        }
        let h = (upper - lower) / (n - 1) as f64;
        let nodes = (0..n)
            .map(|i| if i == n - 1 { upper } else { lower + i as f64 * h })
            .collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Ok(Self {
            kind: DomainKind::Interval { lower, upper },
            nodes,
            weights,
        })
    }

    /// Finite trait set; `weights[k]` is the measure of subset `k`.
    pub fn discrete(labels: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDomain("discrete domain needs at least one point"));
        }
        if labels.len() != weights.len() {
            return Err(Error::Alignment {
                expected: weights.len(),
                found: labels.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidDomain("discrete weights must be finite and > 0"));
        }
        let nodes = (0..weights.len()).map(|i| i as f64).collect();
        Ok(Self {
            kind: DomainKind::Discrete { labels },
            nodes,
            weights,
        })
    }

    /// Discrete domain labelled `0..n`.
    pub fn discrete_unlabelled(weights: Vec<f64>) -> Result<Self> {
        let labels = (0..weights.len()).map(|i| alloc::format!("{i}")).collect();
        Self::discrete(labels, weights)
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn is_interval(&self) -> bool {
        matches!(self.kind, DomainKind::Interval { .. })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Node coordinates; indices `0, 1, ...` for discrete domains.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Grid spacing of an interval domain.
    pub fn spacing(&self) -> Option<f64> {
        match self.kind {
            DomainKind::Interval { lower, upper } => Some((upper - lower) / (self.len() - 1) as f64),
            DomainKind::Discrete { .. } => None,
        }
    }

    /// |Ω|: interval length or total weight.
    pub fn measure(&self) -> f64 {
        match self.kind {
            DomainKind::Interval { lower, upper } => upper - lower,
            DomainKind::Discrete { .. } => self.weights.iter().sum(),
        }
    }

    pub(crate) fn check(&self, found: usize) -> Result<()> {
        if found != self.len() {
            return Err(Error::Alignment {
                expected: self.len(),
                found,
            });
        }
        Ok(())
    }

    /// `Σ_i w_i f_i`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check(f.len())?;
        Ok(self.quad(f))
    }

    #[inline]
    pub(crate) fn quad(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// `Σ_i w_i f_i g_i`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// `x ↦ ∫ k(x,y) f(y) dy`, i.e. `out_i = Σ_j w_j k_ij f_j`.
    pub fn apply_kernel(&self, k: &Kernel, f: &[f64]) -> Result<Field> {
        self.check(k.size())?;
        self.check(f.len())?;
        let mut out = vec![0.0; self.len()];
        self.apply_kernel_into(k, f, &mut out);
        Ok(Field(out))
    }

    /// `y ↦ ∫ k(x,y) g(x) dx`, the transposed pairing.
    pub fn apply_kernel_transpose(&self, k: &Kernel, g: &[f64]) -> Result<Field> {
        self.check(k.size())?;
        self.check(g.len())?;
        let n = self.len();
        let mut out = vec![0.0; n];
        for (i, row) in k.values.chunks_exact(n).enumerate() {
            let c = self.weights[i] * g[i];
            for (o, kij) in out.iter_mut().zip(row) {
                *o += c * kij;
            }
        }
        Ok(Field(out))
    }

    pub(crate) fn apply_kernel_into(&self, k: &Kernel, f: &[f64], out: &mut [f64]) {
        let n = self.len();
        let wf: Vec<f64> = self.weights.iter().zip(f).map(|(w, v)| w * v).collect();
        for (o, row) in out.iter_mut().zip(k.values.chunks_exact(n)) {
            *o = row.iter().zip(&wf).map(|(a, b)| a * b).sum();
        }
    }
}

/// Values of a function of the trait, aligned with the domain nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    /// Samples `f` at the domain nodes.
    pub fn from_fn(domain: &TraitDomain, f: impl Fn(f64) -> f64) -> Self {
        Self(domain.nodes().iter().map(|&x| f(x)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &[f64], f: impl Fn(f64, f64) -> f64) -> Self {
        Self(self.0.iter().zip(other).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Kernel sampled on the node grid, row-major: entry `(i, j)` is `k(x_i, x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    n: usize,
    values: Vec<f64>,
}

impl Kernel {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Alignment {
                expected: n * n,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel"));
        }
        Ok(Self { n, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::Alignment {
                    expected: n,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(n, values)
    }

    pub fn from_fn(domain: &TraitDomain, k: impl Fn(f64, f64) -> f64) -> Self {
        let x = domain.nodes();
        let values = x
            .iter()
            .flat_map(|&xi| x.iter().map(move |&yj| (xi, yj)))
            .map(|(xi, yj)| k(xi, yj))
            .collect();
        Self { n: x.len(), values }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self {
            n,
            values: vec![c; n * n],
        }
    }

    /// `k(x,y) = b(x) p(y)`.
    pub fn separable(b: &[f64], p: &[f64]) -> Result<Self> {
        if b.len() != p.len() {
            return Err(Error::Alignment {
                expected: b.len(),
                found: p.len(),
            });
        }
        let values = b.iter().flat_map(|&bi| p.iter().map(move |&pj| bi * pj)).collect();
        Self::new(b.len(), values)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[j * n + i] = self.values[i * n + j];
            }
        }
        Self { n, values }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Applies a node permutation to both arguments: `k'(i,j) = k(π(i), π(j))`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        Self { n, values }
    }
}
