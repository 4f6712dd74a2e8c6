use std::collections::BTreeSet;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::slot_engine::{sum_all, Backend, CiphertextMeta, SlotVec};

/// A matrix stored one row per ciphertext; the first `row_len` slots of each row are meaningful.
#[derive(Clone, Debug)]
pub struct CipherGrid<C> {
    rows: Vec<C>,
    row_len: usize,
}

impl<C: CiphertextMeta + Clone + Send + Sync> CipherGrid<C> {
    pub fn new(rows: Vec<C>, row_len: usize) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Shape("grid needs at least one row".into()));
        };
        let slots = first.slot_count();
        if rows.iter().any(|r| r.slot_count() != slots) {
            return Err(Error::Shape("grid rows differ in slot count".into()));
        }
        if row_len == 0 || row_len > slots {
            return Err(Error::Shape(format!("row length {row_len} does not fit {slots} slots")));
        }
        Ok(Self { rows, row_len })
    }

    /// Encrypts `matrix` row by row into `slots`-slot ciphertexts.
    pub fn encrypt<B: Backend<Ciphertext = C>>(engine: &B, matrix: &[Vec<f64>], slots: usize) -> Result<Self> {
        let row_len = matrix.first().map_or(0, Vec::len);
        if matrix.iter().any(|r| r.len() != row_len) {
            return Err(Error::Shape("ragged matrix".into()));
        }
        let rows = matrix
            .iter()
            .map(|r| engine.encrypt(&SlotVec::padded(r, slots)?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, row_len)
    }

    /// The same rows with a different meaningful width.
    pub fn with_row_len(self, row_len: usize) -> Result<Self> {
        Self::new(self.rows, row_len)
    }

    /// Keeps the rows at the given indices, in that order.
    pub fn select_rows(&self, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let rows = indices
            .into_iter()
            .map(|i| self.rows.get(i).cloned().ok_or_else(|| Error::Shape(format!("row {i} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, self.row_len)
    }

    pub fn rows(&self) -> &[C] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<C> {
        self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn slot_count(&self) -> usize {
        self.rows[0].slot_count()
    }

    /// Lowest remaining level over all rows.
    pub fn level(&self) -> usize {
        self.rows.iter().map(CiphertextMeta::level).min().unwrap_or(0)
    }

    pub fn decrypt_complex<B: Backend<Ciphertext = C>>(&self, engine: &B) -> Result<Vec<Vec<Complex64>>> {
        self.rows
            .iter()
            .map(|c| Ok(engine.decrypt(c)?.as_slice()[..self.row_len].to_vec()))
            .collect()
    }

    /// Real parts of the `n_rows x row_len` region.
    pub fn decrypt<B: Backend<Ciphertext = C>>(&self, engine: &B) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .decrypt_complex(engine)?
            .into_iter()
            .map(|r| r.into_iter().map(|z| z.re).collect())
            .collect())
    }

    /// Applies `f` to every row in parallel, keeping `row_len`.
    pub fn map_rows<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&C) -> Result<C> + Sync,
    {
        let rows = self.rows.par_iter().map(&f).collect::<Result<Vec<_>>>()?;
        Self::new(rows, self.row_len)
    }
}

/// Rotation amounts [`transpose_grid`] uses.
pub fn transpose_rotations(n_rows: usize, row_len: usize, slots: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for i in 0..n_rows {
        for j in 0..row_len {
            let r = (j + slots - i) % slots;
            if r != 0 {
                out.insert(r);
            }
        }
    }
    out
}

/// Rotations [`transpose_grid`] performs on an `n_rows x row_len` grid.
pub fn transpose_rotation_count(n_rows: usize, row_len: usize) -> usize {
    n_rows * row_len - n_rows.min(row_len)
}

/// Transposes a grid by masking, rotating and accumulating.
///
/// Output row `j` is `sum_i rotate_left(row_i * e_j, j - i)`, so entry `(i, j)`
/// lands in slot `i` of row `j`. Consumes one level. Needs `n_rows <= slot_count`.
pub fn transpose_grid<B: Backend>(engine: &B, grid: &CipherGrid<B::Ciphertext>) -> Result<CipherGrid<B::Ciphertext>> {
    transpose_grid_rows(engine, grid, grid.row_len())
}

/// [`transpose_grid`] restricted to the first `out_rows` output rows (input columns).
pub fn transpose_grid_rows<B: Backend>(
    engine: &B,
    grid: &CipherGrid<B::Ciphertext>,
    out_rows: usize,
) -> Result<CipherGrid<B::Ciphertext>> {
    let slots = grid.slot_count();
    let n_rows = grid.n_rows();
    if n_rows > slots {
        return Err(Error::Shape(format!("{n_rows} rows do not fit as columns of {slots} slots")));
    }
    if out_rows == 0 || out_rows > slots {
        return Err(Error::Shape(format!("cannot take {out_rows} columns of {slots} slots")));
    }
    let masks = (0..out_rows).map(|j| SlotVec::unit(slots, j)).collect::<Result<Vec<_>>>()?;
    let rows = masks
        .par_iter()
        .enumerate()
        .map(|(j, mask)| {
            let terms = grid
                .rows()
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let picked = engine.mult_pt(row, mask)?;
                    engine.rotate_left(&picked, (j + slots - i) % slots)
                })
                .collect::<Result<Vec<_>>>()?;
            sum_all(engine, terms)?.ok_or_else(|| Error::Shape("empty grid".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    CipherGrid::new(rows, n_rows)
}
