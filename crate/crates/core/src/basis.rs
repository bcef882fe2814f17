//! Multi-index combinatorics for the order-`p` polynomial basis.
//!
//! A multi-index `(j_1 <= ... <= j_L)` names both a monomial
//! `v_{j_1} * ... * v_{j_L}` and a mixed partial derivative. Internally an
//! index is stored as per-axis occurrence counts, which makes factorials,
//! monomials and index concatenation O(d).
//!
//! Every vector and matrix in the crate shares the layout built here:
//! the intercept first, then the gradient block, then the second-order
//! block, and so on, lexicographic within each order.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// A non-decreasing tuple of 1-based coordinate axes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    counts: Vec<u32>,
}

impl MultiIndex {
    /// The empty index (intercept) in dimension `d`.
    pub fn intercept(d: usize) -> Self {
        Self { counts: vec![0; d] }
    }

    /// Builds an index from 1-based axis entries in any order.
    pub fn from_entries(d: usize, entries: &[usize]) -> Result<Self> {
        let mut counts = vec![0u32; d];
        for &j in entries {
            if j == 0 || j > d {
                return Err(Error::InvalidIndex(format!("axis {j} outside 1..={d}")));
            }
            counts[j - 1] += 1;
        }
        Ok(Self { counts })
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    /// Parses the digit-string encoding used on the command line:
    /// `""` is the intercept, `"12"` is `(1, 2)`.
    pub fn parse_digits(d: usize, s: &str) -> Result<Self> {
        let mut entries = Vec::with_capacity(s.len());
        for c in s.trim().chars() {
            let j = c.to_digit(10).ok_or_else(|| {
                Error::InvalidIndex(format!("non-digit {c:?} in multi-index {s:?}"))
            })?;
            entries.push(j as usize);
        }
        if entries.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidIndex(format!(
                "multi-index {s:?} is not non-decreasing"
            )));
        }
        Self::from_entries(d, &entries)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Total order `L`.
    pub fn order(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    /// Per-axis occurrence counts `s_k`.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Sorted 1-based entries `(j_1, ..., j_L)`.
    pub fn entries(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(k + 1, c as usize))
            .collect()
    }

    /// Digit-string encoding, inverse of [`MultiIndex::parse_digits`].
    pub fn digits(&self) -> String {
        self.entries().iter().map(|j| j.to_string()).collect()
    }

    /// `prod_k s_k!`.
    pub fn s_factorial(&self) -> u64 {
        self.counts.iter().map(|&c| factorial(c)).product()
    }

    /// `prod_l v_{j_l}`; 1 for the intercept.
    pub fn monomial(&self, v: &[f64]) -> f64 {
        self.counts
            .iter()
            .zip(v)
            .map(|(&c, &x)| x.powi(c as i32))
            .product()
    }

    /// `prod_l h_{j_l}`.
    pub fn bandwidth_product(&self, h: &[f64]) -> f64 {
        self.monomial(h)
    }

    /// Concatenation followed by sorting, i.e. count-wise addition.
    pub fn join(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex {
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let entries = self.entries();
        if entries.is_empty() {
            return f.write_str("()");
        }
        f.write_str("(")?;
        for (i, j) in entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{j}")?;
        }
        f.write_str(")")
    }
}

fn factorial(c: u32) -> u64 {
    (1..=c as u64).product()
}

/// All non-decreasing tuples of length `order` over axes `1..=d`, in
/// lexicographic order.
pub fn indices_of_order(d: usize, order: usize) -> Vec<MultiIndex> {
    fn rec(d: usize, start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
        if left == 0 {
            out.push(MultiIndex::from_entries(d, cur).expect("axes in range"));
            return;
        }
        for j in start..=d {
            cur.push(j);
            rec(d, j, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, 1, order, &mut Vec::with_capacity(order), &mut out);
    out
}

/// Index layout for the order-`p` basis in dimension `d`.
#[derive(Debug, Clone)]
pub struct BasisLayout {
    d: usize,
    p: usize,
    indices: Vec<MultiIndex>,
    top_indices: Vec<MultiIndex>,
    s_factorials: Vec<u64>,
    positions: HashMap<MultiIndex, usize>,
}

impl BasisLayout {
    pub fn new(d: usize, p: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("dimension d must be >= 1".into()));
        }
        if p == 0 {
            return Err(Error::InvalidConfig(
                "polynomial order p must be >= 1".into(),
            ));
        }
        let indices: Vec<MultiIndex> = (0..=p).flat_map(|l| indices_of_order(d, l)).collect();
        let top_indices = indices_of_order(d, p + 1);
        let s_factorials = indices.iter().map(MultiIndex::s_factorial).collect();
        let positions = indices
            .iter()
            .enumerate()
            .map(|(i, idx)| (idx.clone(), i))
            .collect();
        Ok(Self {
            d,
            p,
            indices,
            top_indices,
            s_factorials,
            positions,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of basis functions `D`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of order-`p+1` indices `D_bar`.
    pub fn top_len(&self) -> usize {
        self.top_indices.len()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn top_indices(&self) -> &[MultiIndex] {
        &self.top_indices
    }

    pub fn s_factorials(&self) -> &[u64] {
        &self.s_factorials
    }

    pub fn position(&self, idx: &MultiIndex) -> Option<usize> {
        self.positions.get(idx).copied()
    }

    /// Like [`BasisLayout::position`] but with a descriptive error.
    pub fn require_position(&self, idx: &MultiIndex) -> Result<usize> {
        self.position(idx).ok_or_else(|| {
            Error::InvalidIndex(format!(
                "multi-index {idx} not in the order-{} basis for d={}",
                self.p, self.d
            ))
        })
    }

    /// Fills `out` with the basis monomials evaluated at `v`.
    pub fn fill_monomials(&self, v: &[f64], out: &mut [f64]) {
        for (slot, idx) in out.iter_mut().zip(&self.indices) {
            *slot = idx.monomial(v);
        }
    }
}

/// Binomial coefficient, small arguments only.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}
