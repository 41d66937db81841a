//! Finite-alphabet measures: the alphabet itself, points of the probability
//! simplex and unconstrained signed vectors.

use std::collections::HashSet;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries at or above this floor count as strictly positive.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Allowed deviation of a probability vector's mass from one.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// An ordered set of `K >= 2` distinct symbol labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Alphabet {
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "an alphabet needs at least 2 symbols, got {}",
                symbols.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &symbols {
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols })
    }

    /// The alphabet `d1, ..., dK`.
    pub fn indexed(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|i| format!("d{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

impl TryFrom<Vec<String>> for Alphabet {
    type Error = Error;

    fn try_from(symbols: Vec<String>) -> Result<Self> {
        Self::new(symbols)
    }
}

impl From<Alphabet> for Vec<String> {
    fn from(a: Alphabet) -> Self {
        a.symbols
    }
}

/// A point of the probability simplex over `K` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector {
    entries: Vec<f64>,
}

impl ProbVector {
    /// Validates nonnegativity, finiteness and unit mass (within
    /// [`MASS_TOLERANCE`]).
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a probability vector needs at least 2 cells, got {}",
                entries.len()
            )));
        }
        if let Some((i, v)) = entries
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "probability entry {i} is {v}; entries must be finite and nonnegative"
            )));
        }
        let mass: f64 = entries.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probability vector has mass {mass}, expected 1"
            )));
        }
        Ok(Self { entries })
    }

    /// Normalizes nonnegative masses with a positive total.
    pub fn normalized(masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if total.is_nan() || total <= 0.0 || masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidInput(
                "cannot normalize: masses must be finite, nonnegative, with a positive total"
                    .into(),
            ));
        }
        Self::new(masses.into_iter().map(|m| m / total).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.is_strictly_positive_with(POSITIVITY_FLOOR)
    }

    pub fn is_strictly_positive_with(&self, floor: f64) -> bool {
        self.entries.iter().all(|&p| p >= floor)
    }

    /// Errors on the first entry below [`POSITIVITY_FLOOR`].
    pub fn require_strictly_positive(&self) -> Result<()> {
        match self
            .entries
            .iter()
            .enumerate()
            .find(|(_, &p)| p < POSITIVITY_FLOOR)
        {
            Some((index, &value)) => Err(Error::NonPositiveReference { index, value }),
            None => Ok(()),
        }
    }

    /// Same measure with cells reordered: entry `i` of the result is entry
    /// `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(perm.iter().map(|&i| self.entries[i]).collect())
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.entries
    }
}

impl Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.entries[i]
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.entries
    }
}

/// An arbitrary finite real vector over the alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure {
    entries: Vec<f64>,
}

impl SignedMeasure {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("signed measure entries must be finite".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.entries.iter().sum()
    }

    pub fn has_negative_entry(&self) -> bool {
        self.entries.iter().any(|&v| v < 0.0)
    }
}

impl AsRef<[f64]> for SignedMeasure {
    fn as_ref(&self) -> &[f64] {
        &self.entries
    }
}

impl From<ProbVector> for SignedMeasure {
    fn from(p: ProbVector) -> Self {
        Self { entries: p.entries }
    }
}

/// Sup-norm distance between two vectors of equal length.
/// Overwrites the last entry so that the left-to-right sum of `v` is exactly
/// one whenever some floating-point value allows it.
pub(crate) fn close_unit_mass(v: &mut [f64]) {
    let Some((last, head)) = v.split_last_mut() else { return };
    let head: f64 = head.iter().sum();
    *last = 1.0 - head;
    for _ in 0..64 {
        let total = head + *last;
        if total == 1.0 {
            return;
        }
        *last = if total < 1.0 { last.next_up() } else { last.next_down() };
    }
    *last = 1.0 - head;
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
