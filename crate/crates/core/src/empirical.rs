//! Empirical measures built from a sample: the plain empirical law, the
//! weighted (possibly signed, possibly unnormalized) version and its
//! normalization.

use crate::error::{Error, Result};
use crate::measure::{Alphabet, ProbVector, SignedMeasure};
use crate::weights::{normalize_weights, WeightVector};

/// `n >= 1` observations on a finite alphabet, kept both as the ordered
/// observation list and as per-cell counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    alphabet: Alphabet,
    observations: Vec<usize>,
    counts: Vec<usize>,
}

impl Sample {
    pub fn new(alphabet: Alphabet) -> Self {
        let k = alphabet.len();
        Self {
            alphabet,
            observations: Vec::new(),
            counts: vec![0; k],
        }
    }

    /// Builds a sample from cell indices.
    pub fn from_indices(alphabet: Alphabet, observations: &[usize]) -> Result<Self> {
        let mut s = Self::new(alphabet);
        for &j in observations {
            s.push_index(j)?;
        }
        s.require_nonempty()?;
        Ok(s)
    }

    /// Builds a sample from symbol labels.
    pub fn from_symbols<S: AsRef<str>>(alphabet: Alphabet, symbols: &[S]) -> Result<Self> {
        let mut s = Self::new(alphabet);
        for sym in symbols {
            s.push_symbol(sym.as_ref())?;
        }
        s.require_nonempty()?;
        Ok(s)
    }

    /// A sample with the given cell counts, observations listed cell by cell.
    pub fn from_counts(alphabet: Alphabet, counts: &[usize]) -> Result<Self> {
        if counts.len() != alphabet.len() {
            return Err(Error::LengthMismatch {
                expected: alphabet.len(),
                actual: counts.len(),
            });
        }
        let observations = counts
            .iter()
            .enumerate()
            .flat_map(|(j, &c)| std::iter::repeat_n(j, c))
            .collect();
        let s = Self {
            alphabet,
            observations,
            counts: counts.to_vec(),
        };
        s.require_nonempty()?;
        Ok(s)
    }

    pub fn push_index(&mut self, j: usize) -> Result<()> {
        if j >= self.alphabet.len() {
            return Err(Error::InvalidInput(format!(
                "cell index {j} outside an alphabet of size {}",
                self.alphabet.len()
            )));
        }
        self.observations.push(j);
        self.counts[j] += 1;
        Ok(())
    }

    pub fn push_symbol(&mut self, symbol: &str) -> Result<()> {
        let j = self
            .alphabet
            .index_of(symbol)
            .ok_or_else(|| Error::InvalidInput(format!("unknown symbol {symbol:?}")))?;
        self.push_index(j)
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.observations.is_empty() {
            Err(Error::InvalidInput("a sample needs at least one observation".into()))
        } else {
            Ok(())
        }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn observations(&self) -> &[usize] {
        &self.observations
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Largest-remainder rounding of `n * p` to integer counts summing to `n`.
///
/// Ties in the fractional part go to the lower cell index.
pub fn apportion(p: &ProbVector, n: usize) -> Vec<usize> {
    let exact: Vec<f64> = p.entries().iter().map(|&x| x * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = n.saturating_sub(assigned);
    for &j in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[j] += 1;
        remaining -= 1;
    }
    counts
}

/// `P_n`: entry `j` is `n_j / n`.
pub fn empirical_measure(s: &Sample) -> ProbVector {
    let n = s.len() as f64;
    ProbVector::new(s.counts().iter().map(|&c| c as f64 / n).collect())
        .expect("counts of a nonempty sample sum to n")
}

fn check_weights(s: &Sample, w: &WeightVector) -> Result<()> {
    if w.len() != s.len() {
        return Err(Error::LengthMismatch {
            expected: s.len(),
            actual: w.len(),
        });
    }
    Ok(())
}

/// `P_n^W`: entry `j` is `(1/n) sum_{i: X_i = d_j} w_i`. Not necessarily a
/// probability vector.
pub fn weighted_empirical(s: &Sample, w: &WeightVector) -> Result<SignedMeasure> {
    check_weights(s, w)?;
    let mut cells = vec![0.0; s.alphabet().len()];
    for (&j, &wi) in s.observations().iter().zip(w.as_slice()) {
        cells[j] += wi;
    }
    let n = s.len() as f64;
    SignedMeasure::new(cells.into_iter().map(|c| c / n).collect())
}

/// Outcome of [`normalized_weighted_empirical`].
#[derive(Debug, Clone, PartialEq)]
pub enum NormalizedEmpirical {
    /// The weights summed to zero.
    Undefined,
    /// All entries nonnegative.
    Defined(ProbVector),
    /// Mass one with at least one negative entry.
    SignedSimplex(SignedMeasure),
}

impl NormalizedEmpirical {
    /// Entries of the defined cases.
    pub fn entries(&self) -> Option<&[f64]> {
        match self {
            Self::Undefined => None,
            Self::Defined(p) => Some(p.entries()),
            Self::SignedSimplex(m) => Some(m.entries()),
        }
    }
}

/// `sum_i Z_i delta_{X_i}` with `Z = W / sum W`.
pub fn normalized_weighted_empirical(s: &Sample, w: &WeightVector) -> Result<NormalizedEmpirical> {
    check_weights(s, w)?;
    let Some(z) = normalize_weights(w) else {
        return Ok(NormalizedEmpirical::Undefined);
    };
    let k = s.alphabet().len();
    let mut cells = vec![0.0; k];
    for (&j, &zi) in s.observations().iter().zip(z.as_slice()) {
        cells[j] += zi;
    }
    crate::measure::close_unit_mass(&mut cells);
    if cells.iter().any(|&c| c < 0.0) {
        Ok(NormalizedEmpirical::SignedSimplex(SignedMeasure::new(cells)?))
    } else {
        Ok(NormalizedEmpirical::Defined(ProbVector::new(cells)?))
    }
}
