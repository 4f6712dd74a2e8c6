//! The SIMD slot computational model.
//!
//! Every encrypted circuit in this crate is written against [`Backend`]: a
//! ciphertext can be added, multiplied (by another ciphertext or by a
//! plaintext [`SlotVec`]) and rotated, and nothing else. No operation hands
//! out a single slot of a ciphertext; the only way back to cleartext is a
//! full [`Backend::decrypt`].
//!
//! Two backends implement the trait: [`SimEngine`], an exact slot-level
//! simulator with level accounting and an optional noise model, and
//! [`crate::ckks::CkksEngine`], a small leveled RLWE scheme.

mod meter;
mod sim;

use std::collections::BTreeSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use meter::{CostCounts, CostMeter, OpKind};
pub use sim::{KeySet, NoiseModel, SimCiphertext, SimConfig, SimEngine};

/// A plaintext vector of `2^n` complex slots (`n >= 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct SlotVec(Vec<Complex64>);

impl SlotVec {
    pub fn new(slots: Vec<Complex64>) -> Result<Self> {
        check_slot_count(slots.len())?;
        if slots.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Packing("slot values must be finite".into()));
        }
        Ok(Self(slots))
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    /// Real values zero-padded to `len` slots.
    pub fn padded(values: &[f64], len: usize) -> Result<Self> {
        if values.len() > len {
            return Err(Error::Packing(format!(
                "{} values do not fit in {len} slots",
                values.len()
            )));
        }
        let mut slots = vec![Complex64::new(0.0, 0.0); len];
        for (s, &v) in slots.iter_mut().zip(values) {
            s.re = v;
        }
        Self::new(slots)
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::constant(len, 0.0)
    }

    pub fn constant(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(value, 0.0); len])
    }

    /// The indicator vector of slot `index`.
    pub fn unit(len: usize, index: usize) -> Result<Self> {
        let mut v = Self::zeros(len)?;
        if index >= len {
            return Err(Error::Shape(format!("slot {index} out of range for {len} slots")));
        }
        v.0[index] = Complex64::new(1.0, 0.0);
        Ok(v)
    }

    /// Indicator of the slots in `range`.
    pub fn mask(len: usize, range: std::ops::Range<usize>) -> Result<Self> {
        let mut v = Self::zeros(len)?;
        for i in range.filter(|&i| i < len) {
            v.0[i] = Complex64::new(1.0, 0.0);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.re).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    /// Slot `i` of the result holds slot `(i + r) mod len` of `self`.
    pub fn rotated_left(&self, r: usize) -> Self {
        let mut out = self.0.clone();
        out.rotate_left(r % self.len());
        Self(out)
    }

    pub fn hadamard(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scaled(&self, k: Complex64) -> Self {
        Self(self.0.iter().map(|a| a * k).collect())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn check_slot_count(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Packing(format!("slot count {n} is not a power of two >= 2")));
    }
    Ok(())
}

/// Metadata every backend ciphertext exposes. Slot contents are not part of it.
pub trait CiphertextMeta {
    fn slot_count(&self) -> usize;
    /// Remaining multiplicative budget.
    fn level(&self) -> usize;
    fn scale(&self) -> f64;
}

/// The add / multiply / rotate interface shared by the simulator and the CKKS backend.
pub trait Backend: Sync {
    type Ciphertext: CiphertextMeta + Clone + Send + Sync;

    /// Level of a fresh encryption.
    fn max_level(&self) -> usize;
    fn meter(&self) -> &CostMeter;
    /// Whether a rotation key for `r` (taken modulo `slot_count`) is present.
    fn has_rotation(&self, r: usize, slot_count: usize) -> bool;

    fn encrypt(&self, m: &SlotVec) -> Result<Self::Ciphertext>;
    fn decrypt(&self, c: &Self::Ciphertext) -> Result<SlotVec>;

    fn add(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> Result<Self::Ciphertext>;
    fn sub(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> Result<Self::Ciphertext>;
    fn add_plain(&self, a: &Self::Ciphertext, p: &SlotVec) -> Result<Self::Ciphertext>;
    /// Slotwise product followed by a rescale; consumes one level.
    fn mult_ct(&self, a: &Self::Ciphertext, b: &Self::Ciphertext) -> Result<Self::Ciphertext>;
    /// Slotwise product with a plaintext followed by a rescale; consumes one level.
    fn mult_pt(&self, a: &Self::Ciphertext, p: &SlotVec) -> Result<Self::Ciphertext>;
    /// Slot `i` of the result holds slot `(i + r) mod slot_count` of `c`.
    fn rotate_left(&self, c: &Self::Ciphertext, r: usize) -> Result<Self::Ciphertext>;

    fn rotate_right(&self, c: &Self::Ciphertext, r: usize) -> Result<Self::Ciphertext> {
        let n = c.slot_count();
        self.rotate_left(c, (n - r % n) % n)
    }

    fn mult_scalar(&self, c: &Self::Ciphertext, k: f64) -> Result<Self::Ciphertext> {
        self.mult_pt(c, &SlotVec::constant(c.slot_count(), k)?)
    }

    fn add_scalar(&self, c: &Self::Ciphertext, k: f64) -> Result<Self::Ciphertext> {
        self.add_plain(c, &SlotVec::constant(c.slot_count(), k)?)
    }
}

/// Sums an iterator of ciphertexts; `None` when it is empty.
pub fn sum_all<B: Backend>(
    engine: &B,
    items: impl IntoIterator<Item = B::Ciphertext>,
) -> Result<Option<B::Ciphertext>> {
    let mut acc: Option<B::Ciphertext> = None;
    for c in items {
        acc = Some(match acc {
            None => c,
            Some(a) => engine.add(&a, &c)?,
        });
    }
    Ok(acc)
}

/// How [`rotate_sum`] reduces slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RotSumMode {
    /// `n - 1` rotations of the input, each added to an accumulator.
    #[default]
    Naive,
    /// `log2 n` rotate-and-add doublings.
    Tree,
}

/// Leaves the sum of the first `n_terms` slots of `c` in slot 0.
///
/// Other slots hold partial sums and must be treated as garbage by callers.
pub fn rotate_sum<B: Backend>(
    engine: &B,
    c: &B::Ciphertext,
    n_terms: usize,
    mode: RotSumMode,
) -> Result<B::Ciphertext> {
    let n = c.slot_count();
    if n_terms == 0 || n_terms > n {
        return Err(Error::Shape(format!("cannot sum {n_terms} terms of a {n}-slot ciphertext")));
    }
    match mode {
        RotSumMode::Naive => {
            let mut acc = c.clone();
            for k in 1..n_terms {
                acc = engine.add(&acc, &engine.rotate_left(c, k)?)?;
            }
            Ok(acc)
        }
        RotSumMode::Tree => {
            if !n_terms.is_power_of_two() {
                return Err(Error::Shape(format!(
                    "tree rotate-sum needs a power-of-two term count, got {n_terms}"
                )));
            }
            let mut acc = c.clone();
            let mut k = 1;
            while k < n_terms {
                acc = engine.add(&acc, &engine.rotate_left(&acc, k)?)?;
                k *= 2;
            }
            Ok(acc)
        }
    }
}

/// Term count a reduction over `width` meaningful slots uses in `mode`.
pub fn rotate_sum_terms(width: usize, mode: RotSumMode) -> usize {
    match mode {
        RotSumMode::Naive => width.max(1),
        RotSumMode::Tree => width.max(1).next_power_of_two(),
    }
}

/// Rotation amounts [`rotate_sum`] needs for `n_terms` in `mode`.
pub fn rotate_sum_rotations(n_terms: usize, mode: RotSumMode) -> BTreeSet<usize> {
    match mode {
        RotSumMode::Naive => (1..n_terms).collect(),
        RotSumMode::Tree => {
            let mut out = BTreeSet::new();
            let mut k = 1;
            while k < n_terms {
                out.insert(k);
                k *= 2;
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slotvec_rejects_bad_lengths() {
        assert!(matches!(SlotVec::from_real(&[1.0; 50]), Err(Error::Packing(_))));
        assert!(matches!(SlotVec::from_real(&[1.0]), Err(Error::Packing(_))));
        assert!(SlotVec::from_real(&[1.0; 64]).is_ok());
    }

    #[test]
    fn slotvec_rejects_non_finite() {
        assert!(SlotVec::from_real(&[1.0, f64::NAN]).is_err());
        assert!(SlotVec::from_real(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn rotation_convention() {
        let v = SlotVec::from_real(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(v.rotated_left(1).real_parts(), vec![2.0, 3.0, 4.0, 1.0]);
        assert_eq!(v.rotated_left(5).real_parts(), vec![2.0, 3.0, 4.0, 1.0]);
    }

    #[test]
    fn rotsum_rotation_sets() {
        assert_eq!(rotate_sum_rotations(8, RotSumMode::Tree).len(), 3);
        assert_eq!(rotate_sum_rotations(8, RotSumMode::Naive).len(), 7);
        assert_eq!(rotate_sum_terms(17, RotSumMode::Tree), 32);
        assert_eq!(rotate_sum_terms(17, RotSumMode::Naive), 17);
    }
}
