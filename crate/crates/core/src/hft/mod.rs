//! Homomorphic Fourier transform over slot ciphertexts.
//!
//! A [`DftPlan`] factors the unitary DFT matrix into `log2 n` radix-2
//! decimation-in-time stages. Each stage is stored by its nonzero diagonals,
//! so applying it to a ciphertext costs one rotation and one plaintext
//! multiplication per diagonal and exactly one level. The input bit-reversal
//! permutation is folded into the first stage, which therefore carries many
//! more diagonals than the three of an ordinary butterfly stage.

mod grid;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slot_engine::{sum_all, Backend, CiphertextMeta, SlotVec};

pub use grid::{transpose_grid, transpose_grid_rows, transpose_rotation_count, transpose_rotations, CipherGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Inverse,
}

/// One generalized diagonal: `y[i] += values[i] * x[(i + rotation) mod slots]`.
#[derive(Clone, Debug)]
pub struct Diagonal {
    pub rotation: usize,
    pub values: SlotVec,
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub diagonals: Vec<Diagonal>,
}

/// A factored DFT of size `size` acting on the first `size` slots of
/// `slot_count`-slot ciphertexts.
#[derive(Clone, Debug)]
pub struct DftPlan {
    size: usize,
    slot_count: usize,
    direction: Direction,
    stages: Vec<Stage>,
}

/// Knobs for [`apply_hft_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HftOptions {
    /// Group each stage's rotations into baby and giant steps when that saves rotations.
    pub bsgs: bool,
}

fn bit_reverse(mut i: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (i & 1);
        i >>= 1;
    }
    r
}

type SparseRows = Vec<Vec<(usize, Complex64)>>;

fn butterfly(n: usize, half: usize, sign: f64) -> SparseRows {
    let span = 2 * half;
    (0..n)
        .map(|i| {
            let pos = i % span;
            if pos < half {
                let w = Complex64::from_polar(1.0, sign * 2.0 * PI * pos as f64 / span as f64);
                vec![(i, Complex64::new(FRAC_1_SQRT_2, 0.0)), (i + half, w * FRAC_1_SQRT_2)]
            } else {
                let j = pos - half;
                let w = Complex64::from_polar(1.0, sign * 2.0 * PI * j as f64 / span as f64);
                vec![(i - half, Complex64::new(FRAC_1_SQRT_2, 0.0)), (i, -w * FRAC_1_SQRT_2)]
            }
        })
        .collect()
}

fn to_diagonals(rows: &SparseRows, slot_count: usize) -> Result<Vec<Diagonal>> {
    let mut diags: BTreeMap<usize, Vec<Complex64>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            let r = (j + slot_count - i) % slot_count;
            diags.entry(r).or_insert_with(|| vec![Complex64::new(0.0, 0.0); slot_count])[i] += v;
        }
    }
    diags
        .into_iter()
        .filter(|(_, d)| d.iter().any(|z| z.norm() > 0.0))
        .map(|(rotation, d)| Ok(Diagonal { rotation, values: SlotVec::new(d)? }))
        .collect()
}

/// Plan for a `n`-point transform on `n`-slot ciphertexts.
pub fn build_plan(n: usize, direction: Direction) -> Result<DftPlan> {
    build_plan_embedded(n, n, direction)
}

/// Plan for a `n`-point transform on the first `n` slots of `slot_count`-slot ciphertexts.
/// Slots at index `n` and above must be zero on input and stay zero.
pub fn build_plan_embedded(n: usize, slot_count: usize, direction: Direction) -> Result<DftPlan> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Plan(format!("size {n} is not a power of two >= 2")));
    }
    if !slot_count.is_power_of_two() || slot_count < n {
        return Err(Error::Plan(format!("{n}-point plan does not fit {slot_count} slots")));
    }
    let bits = n.trailing_zeros();
    let sign = match direction {
        Direction::Forward => -1.0,
        Direction::Inverse => 1.0,
    };
    let mut stages = Vec::with_capacity(bits as usize);
    let mut half = 1;
    while half < n {
        let mut rows = butterfly(n, half, sign);
        if half == 1 {
            for row in rows.iter_mut() {
                for entry in row.iter_mut() {
                    entry.0 = bit_reverse(entry.0, bits);
                }
            }
        }
        stages.push(Stage { diagonals: to_diagonals(&rows, slot_count)? });
        half *= 2;
    }
    Ok(DftPlan { size: n, slot_count, direction, stages })
}

impl DftPlan {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Levels consumed by one application.
    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    /// Dense `slot_count x slot_count` matrix of the composed stages.
    pub fn dense_matrix(&self) -> Vec<Vec<Complex64>> {
        let n = self.slot_count;
        let mut m: Vec<Vec<Complex64>> = (0..n)
            .map(|i| (0..n).map(|j| Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).collect())
            .collect();
        for stage in &self.stages {
            let mut next = vec![vec![Complex64::new(0.0, 0.0); n]; n];
            for d in &stage.diagonals {
                for (i, row) in next.iter_mut().enumerate() {
                    let v = d.values.as_slice()[i];
                    if v.norm() == 0.0 {
                        continue;
                    }
                    let src = &m[(i + d.rotation) % n];
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += v * s;
                    }
                }
            }
            m = next;
        }
        m
    }

    /// Rotation amounts an application needs under `opts`.
    pub fn rotations(&self, opts: HftOptions) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for stage in &self.stages {
            match bsgs_layout(stage, self.slot_count, opts) {
                Some(layout) => {
                    out.extend(layout.babies.iter().copied().filter(|&b| b != 0));
                    out.extend(layout.giants.keys().copied().filter(|&g| g != 0));
                }
                None => out.extend(stage.diagonals.iter().map(|d| d.rotation).filter(|&r| r != 0)),
            }
        }
        out
    }

    /// Rotations an application performs under `opts`.
    pub fn rotation_count(&self, opts: HftOptions) -> usize {
        self.stages
            .iter()
            .map(|stage| match bsgs_layout(stage, self.slot_count, opts) {
                Some(l) => {
                    l.babies.iter().filter(|&&b| b != 0).count()
                        + l.giants.keys().filter(|&&g| g != 0).count()
                }
                None => stage.diagonals.iter().filter(|d| d.rotation != 0).count(),
            })
            .sum()
    }
}

struct BsgsLayout {
    babies: BTreeSet<usize>,
    /// giant offset -> (baby offset, diagonal index)
    giants: BTreeMap<usize, Vec<(usize, usize)>>,
}

fn bsgs_layout(stage: &Stage, slot_count: usize, opts: HftOptions) -> Option<BsgsLayout> {
    if !opts.bsgs {
        return None;
    }
    let step = ((slot_count as f64).sqrt().ceil() as usize).next_power_of_two();
    let mut babies = BTreeSet::new();
    let mut giants: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (k, d) in stage.diagonals.iter().enumerate() {
        let b = d.rotation % step;
        babies.insert(b);
        giants.entry(d.rotation - b).or_default().push((b, k));
    }
    let grouped = babies.iter().filter(|&&b| b != 0).count() + giants.keys().filter(|&&g| g != 0).count();
    let plain = stage.diagonals.iter().filter(|d| d.rotation != 0).count();
    (grouped < plain).then_some(BsgsLayout { babies, giants })
}

/// Applies `plan` to `c` with default options.
pub fn apply_hft<B: Backend>(engine: &B, c: &B::Ciphertext, plan: &DftPlan) -> Result<B::Ciphertext> {
    apply_hft_with(engine, c, plan, HftOptions::default())
}

pub fn apply_hft_with<B: Backend>(
    engine: &B,
    c: &B::Ciphertext,
    plan: &DftPlan,
    opts: HftOptions,
) -> Result<B::Ciphertext> {
    if c.slot_count() != plan.slot_count {
        return Err(Error::Shape(format!(
            "plan expects {} slots, ciphertext has {}",
            plan.slot_count,
            c.slot_count()
        )));
    }
    let mut x = c.clone();
    for stage in &plan.stages {
        x = match bsgs_layout(stage, plan.slot_count, opts) {
            None => apply_stage(engine, &x, stage)?,
            Some(layout) => apply_stage_bsgs(engine, &x, stage, &layout, plan.slot_count)?,
        };
    }
    Ok(x)
}

fn apply_stage<B: Backend>(engine: &B, x: &B::Ciphertext, stage: &Stage) -> Result<B::Ciphertext> {
    let terms = stage
        .diagonals
        .iter()
        .map(|d| engine.mult_pt(&engine.rotate_left(x, d.rotation)?, &d.values))
        .collect::<Result<Vec<_>>>()?;
    sum_all(engine, terms)?.ok_or_else(|| Error::Plan("empty stage".into()))
}

fn apply_stage_bsgs<B: Backend>(
    engine: &B,
    x: &B::Ciphertext,
    stage: &Stage,
    layout: &BsgsLayout,
    slot_count: usize,
) -> Result<B::Ciphertext> {
    let babies = layout
        .babies
        .iter()
        .map(|&b| Ok((b, engine.rotate_left(x, b)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let mut parts = Vec::with_capacity(layout.giants.len());
    for (&giant, members) in &layout.giants {
        let terms = members
            .iter()
            .map(|&(b, k)| {
                // pre-rotate the diagonal right by the giant step so the final rotation realigns it
                let shifted = stage.diagonals[k].values.rotated_left((slot_count - giant) % slot_count);
                engine.mult_pt(&babies[&b], &shifted)
            })
            .collect::<Result<Vec<_>>>()?;
        let inner = sum_all(engine, terms)?.ok_or_else(|| Error::Plan("empty giant step".into()))?;
        parts.push(engine.rotate_left(&inner, giant)?);
    }
    sum_all(engine, parts)?.ok_or_else(|| Error::Plan("empty stage".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slot_engine::{KeySet, SimConfig, SimEngine};

    fn dft_oracle(x: &[Complex64], sign: f64) -> Vec<Complex64> {
        let n = x.len();
        let norm = 1.0 / (n as f64).sqrt();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| v * Complex64::from_polar(1.0, sign * 2.0 * PI * (j * k) as f64 / n as f64))
                    .sum::<Complex64>()
                    * norm
            })
            .collect()
    }

    #[test]
    fn two_point_plan() {
        let plan = build_plan(2, Direction::Forward).unwrap();
        let m = plan.dense_matrix();
        let x = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        for row in &m {
            let y: Complex64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((y - Complex64::new(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn plan_matches_dense_dft_matrix() {
        for (dir, sign) in [(Direction::Forward, -1.0), (Direction::Inverse, 1.0)] {
            let plan = build_plan(8, dir).unwrap();
            assert_eq!(plan.depth(), 3);
            let m = plan.dense_matrix();
            for col in 0..8 {
                let mut e = vec![Complex64::new(0.0, 0.0); 8];
                e[col] = Complex64::new(1.0, 0.0);
                let want = dft_oracle(&e, sign);
                for row in 0..8 {
                    assert!((m[row][col] - want[row]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn butterfly_stages_have_at_most_three_diagonals() {
        let plan = build_plan(64, Direction::Forward).unwrap();
        for stage in &plan.stages()[1..] {
            assert!(stage.diagonals.len() <= 3);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(build_plan(12, Direction::Forward), Err(Error::Plan(_))));
        assert!(matches!(build_plan_embedded(64, 32, Direction::Forward), Err(Error::Plan(_))));
    }

    #[test]
    fn embedded_plan_transforms_prefix_only() {
        let plan = build_plan_embedded(8, 32, Direction::Forward).unwrap();
        let engine = SimEngine::new(KeySet::with_all_rotations(1, 32).unwrap(), SimConfig::default());
        let mut x = vec![0.0; 32];
        for (i, v) in x.iter_mut().take(8).enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let c = engine.encrypt(&SlotVec::from_real(&x).unwrap()).unwrap();
        let y = engine.decrypt(&apply_hft(&engine, &c, &plan).unwrap()).unwrap();
        let want = dft_oracle(&x[..8].iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>(), -1.0);
        for k in 0..8 {
            assert!((y.as_slice()[k] - want[k]).norm() < 1e-12);
        }
        assert!(y.as_slice()[8..].iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn impulse_gives_constant_and_bsgs_agrees() {
        let n = 64;
        let engine = SimEngine::new(KeySet::with_all_rotations(1, n).unwrap(), SimConfig::default());
        let plan = build_plan(n, Direction::Forward).unwrap();
        let c = engine.encrypt(&SlotVec::unit(n, 0).unwrap()).unwrap();
        let before = engine.meter().snapshot();
        let y = engine.decrypt(&apply_hft(&engine, &c, &plan).unwrap()).unwrap();
        let plain_rot = engine.meter().snapshot().since(&before).rotate;
        let expect = 1.0 / (n as f64).sqrt();
        assert!(y.as_slice().iter().all(|z| (z - Complex64::new(expect, 0.0)).norm() < 1e-12));
        assert_eq!(plain_rot as usize, plan.rotation_count(HftOptions::default()));

        let opts = HftOptions { bsgs: true };
        let before = engine.meter().snapshot();
        let z = engine.decrypt(&apply_hft_with(&engine, &c, &plan, opts).unwrap()).unwrap();
        let bsgs_rot = engine.meter().snapshot().since(&before).rotate;
        assert!(z.max_abs_diff(&y) < 1e-12);
        assert!(bsgs_rot < plain_rot);
        assert_eq!(bsgs_rot as usize, plan.rotation_count(opts));
    }
}
