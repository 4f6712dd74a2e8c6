//! Frequency-domain convolution on row-packed grids.
//!
//! Every channel image is zero-padded to a fixed `grid_rows x row_slots`
//! spectral grid. The forward 2D transform is a row transform, a transpose,
//! a column transform and a transpose back. Products with the plaintext filter
//! spectra are summed over input channels, then the inverse runs the same
//! four steps. Circular convolution on the padded grid equals linear
//! convolution on the valid region.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::hft::{
    apply_hft, build_plan, build_plan_embedded, transpose_grid, transpose_grid_rows, transpose_rotations, CipherGrid,
    DftPlan, Direction, HftOptions,
};
use crate::slot_engine::{sum_all, Backend, SlotVec};

/// One conv layer: `filters[out][in]` is a row-major `kernel x kernel` window.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub filters: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<f64>,
}

impl ConvSpec {
    pub fn out_channels(&self) -> usize {
        self.filters.len()
    }

    pub fn in_channels(&self) -> usize {
        self.filters.first().map_or(0, Vec::len)
    }

    /// Slots (and rows) between a grid origin and the first valid output.
    pub fn offset(&self) -> usize {
        2 * self.pad
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel;
        if k == 0 || self.stride == 0 || self.offset() != k - 1 {
            return Err(Error::Shape(format!("kernel {k}, stride {}, pad {} inconsistent", self.stride, self.pad)));
        }
        if self.bias.len() != self.out_channels()
            || self.filters.iter().any(|o| o.len() != self.in_channels() || o.iter().any(|f| f.len() != k * k))
        {
            return Err(Error::Shape("filter bank is ragged".into()));
        }
        Ok(())
    }
}

/// Transform plans shared by every conv block.
#[derive(Clone, Debug)]
pub struct SpectralGeometry {
    pub row_slots: usize,
    pub grid_rows: usize,
    row_fwd: DftPlan,
    row_inv: DftPlan,
    col_fwd: DftPlan,
    col_inv: DftPlan,
}

impl SpectralGeometry {
    pub fn new(row_slots: usize, grid_rows: usize) -> Result<Self> {
        if grid_rows > row_slots {
            return Err(Error::Shape(format!("{grid_rows} grid rows exceed {row_slots} slots")));
        }
        Ok(Self {
            row_slots,
            grid_rows,
            row_fwd: build_plan(row_slots, Direction::Forward)?,
            row_inv: build_plan(row_slots, Direction::Inverse)?,
            col_fwd: build_plan_embedded(grid_rows, row_slots, Direction::Forward)?,
            col_inv: build_plan_embedded(grid_rows, row_slots, Direction::Inverse)?,
        })
    }

    /// Levels one [`conv2d_freq`] call consumes.
    pub fn conv_depth(&self) -> usize {
        self.row_fwd.depth() + self.col_fwd.depth() + self.row_inv.depth() + self.col_inv.depth() + 5
    }

    /// Rotations needed for an `h x w` input and output.
    pub fn rotations(&self, h: usize) -> BTreeSet<usize> {
        let (s, r) = (self.row_slots, self.grid_rows);
        let mut out = BTreeSet::new();
        for plan in [&self.row_fwd, &self.row_inv, &self.col_fwd, &self.col_inv] {
            out.extend(plan.rotations(HftOptions::default()));
        }
        out.extend(transpose_rotations(h, s, s));
        out.extend(transpose_rotations(s, r, s));
        out.extend(transpose_rotations(r, s, s));
        out.extend(transpose_rotations(s, h, s));
        out
    }

    fn check_input(&self, g: &CipherGrid<impl crate::slot_engine::CiphertextMeta + Clone + Send + Sync>) -> Result<()> {
        if g.slot_count() != self.row_slots || g.n_rows() > self.grid_rows || g.row_len() > self.row_slots {
            return Err(Error::Shape(format!(
                "{}x{} grid of {}-slot rows does not fit the {}x{} spectral grid",
                g.n_rows(),
                g.row_len(),
                g.slot_count(),
                self.grid_rows,
                self.row_slots
            )));
        }
        Ok(())
    }

    /// Unitary 2D spectrum: `grid_rows` rows of `row_slots` frequencies.
    pub fn forward<B: Backend>(&self, engine: &B, g: &CipherGrid<B::Ciphertext>) -> Result<CipherGrid<B::Ciphertext>> {
        self.check_input(g)?;
        let rows = g.map_rows(|c| apply_hft(engine, c, &self.row_fwd))?.with_row_len(self.row_slots)?;
        let cols = transpose_grid(engine, &rows)?;
        let cols = cols.map_rows(|c| apply_hft(engine, c, &self.col_fwd))?.with_row_len(self.grid_rows)?;
        transpose_grid(engine, &cols)
    }

    /// Inverse of [`SpectralGeometry::forward`], keeping the first `out_h` rows and `out_w` columns.
    pub fn inverse<B: Backend>(
        &self,
        engine: &B,
        spectrum: &CipherGrid<B::Ciphertext>,
        out_h: usize,
        out_w: usize,
    ) -> Result<CipherGrid<B::Ciphertext>> {
        let rows = spectrum.map_rows(|c| apply_hft(engine, c, &self.row_inv))?;
        let cols = transpose_grid(engine, &rows)?;
        let cols = cols.map_rows(|c| apply_hft(engine, c, &self.col_inv))?;
        transpose_grid_rows(engine, &cols, out_h)?.with_row_len(out_w)
    }
}

/// Unnormalized 2D DFT of the flipped filter placed at the grid origin, one `SlotVec` per grid row.
///
/// Multiplying a unitary spectrum by this and applying the unitary inverse
/// yields the cross-correlation with the filter, with valid output `(i, j)`
/// at grid position `(i + k - 1, j + k - 1)`.
pub fn filter_spectrum(filter: &[f64], kernel: usize, grid_rows: usize, row_slots: usize) -> Result<Vec<SlotVec>> {
    if filter.len() != kernel * kernel || kernel > grid_rows || kernel > row_slots {
        return Err(Error::Shape(format!("{kernel}x{kernel} filter does not fit {grid_rows}x{row_slots}")));
    }
    let mut grid = vec![vec![Complex64::new(0.0, 0.0); row_slots]; grid_rows];
    for a in 0..kernel {
        for b in 0..kernel {
            grid[a][b] = Complex64::new(filter[(kernel - 1 - a) * kernel + (kernel - 1 - b)], 0.0);
        }
    }
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(row_slots);
    for row in grid.iter_mut() {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(grid_rows);
    let mut col = vec![Complex64::new(0.0, 0.0); grid_rows];
    for v in 0..row_slots {
        for (u, x) in col.iter_mut().enumerate() {
            *x = grid[u][v];
        }
        col_fft.process(&mut col);
        for (u, x) in col.iter().enumerate() {
            grid[u][v] = *x;
        }
    }
    grid.into_iter().map(SlotVec::new).collect()
}

/// Precomputed filter spectra `[out][in]` for one conv layer.
#[derive(Clone, Debug)]
pub struct ConvKernel {
    pub spec: ConvSpec,
    spectra: Vec<Vec<Vec<SlotVec>>>,
}

impl ConvKernel {
    pub fn new(spec: ConvSpec, geometry: &SpectralGeometry) -> Result<Self> {
        spec.validate()?;
        let spectra = spec
            .filters
            .iter()
            .map(|per_in| {
                per_in
                    .iter()
                    .map(|f| filter_spectrum(f, spec.kernel, geometry.grid_rows, geometry.row_slots))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, spectra })
    }
}

/// Stride-1 convolution plus bias of every output channel.
///
/// Output grids have the input's rows and width; the valid outputs start at
/// row and slot `kernel - 1`, the rest is garbage to be dropped by [`apply_stride`].
pub fn conv2d_freq<B: Backend>(
    engine: &B,
    geometry: &SpectralGeometry,
    inputs: &[CipherGrid<B::Ciphertext>],
    kernel: &ConvKernel,
) -> Result<Vec<CipherGrid<B::Ciphertext>>> {
    let spec = &kernel.spec;
    if inputs.len() != spec.in_channels() {
        return Err(Error::Shape(format!("{} input channels, filters expect {}", inputs.len(), spec.in_channels())));
    }
    let (h, w) = (inputs[0].n_rows(), inputs[0].row_len());
    if inputs.iter().any(|g| g.n_rows() != h || g.row_len() != w) || h < spec.kernel || w < spec.kernel {
        return Err(Error::Shape("input channels differ in shape or are smaller than the filter".into()));
    }
    let spectra = inputs.iter().map(|g| geometry.forward(engine, g)).collect::<Result<Vec<_>>>()?;
    kernel
        .spectra
        .iter()
        .zip(&spec.bias)
        .map(|(per_in, &bias)| {
            let rows = (0..geometry.grid_rows)
                .into_par_iter()
                .map(|u| {
                    let terms = spectra
                        .iter()
                        .zip(per_in)
                        .map(|(x, f)| engine.mult_pt(&x.rows()[u], &f[u]))
                        .collect::<Result<Vec<_>>>()?;
                    sum_all(engine, terms)?.ok_or_else(|| Error::Shape("no input channels".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let summed = CipherGrid::new(rows, geometry.row_slots)?;
            let out = geometry.inverse(engine, &summed, h, w)?;
            if bias == 0.0 {
                Ok(out)
            } else {
                out.map_rows(|c| engine.add_scalar(c, bias))
            }
        })
        .collect()
}

/// Output extent of a strided valid convolution.
pub fn strided_len(valid: usize, stride: usize) -> usize {
    valid.div_ceil(stride)
}

/// Keeps every `stride`-th valid output and moves it to the grid origin.
///
/// Valid rows are picked from the row list directly. Each picked row is
/// rotated left by the `2 * pad` offset, then either masked to the valid width
/// (`stride == 1`) or compacted slot `stride * b -> b` by mask-and-rotate.
/// Consumes one level.
pub fn apply_stride<B: Backend>(
    engine: &B,
    g: &CipherGrid<B::Ciphertext>,
    stride: usize,
    pad: usize,
) -> Result<CipherGrid<B::Ciphertext>> {
    let offset = 2 * pad;
    if stride == 0 || g.n_rows() <= offset || g.row_len() <= offset {
        return Err(Error::Shape(format!("stride {stride} with offset {offset} on a {}x{} grid", g.n_rows(), g.row_len())));
    }
    let slots = g.slot_count();
    let (valid_h, valid_w) = (g.n_rows() - offset, g.row_len() - offset);
    let (out_h, out_w) = (strided_len(valid_h, stride), strided_len(valid_w, stride));
    let picked = g.select_rows((0..out_h).map(|a| offset + stride * a))?;
    let mask = SlotVec::mask(slots, 0..valid_w)?;
    let units = (0..out_w).map(|b| SlotVec::unit(slots, stride * b)).collect::<Result<Vec<_>>>()?;
    picked
        .map_rows(|row| {
            let aligned = engine.rotate_left(row, offset)?;
            if stride == 1 {
                return engine.mult_pt(&aligned, &mask);
            }
            let terms = units
                .iter()
                .enumerate()
                .map(|(b, e)| engine.rotate_left(&engine.mult_pt(&aligned, e)?, (stride - 1) * b))
                .collect::<Result<Vec<_>>>()?;
            sum_all(engine, terms)?.ok_or_else(|| Error::Shape("empty stride mask".into()))
        })?
        .with_row_len(out_w)
}

/// Rotations [`apply_stride`] needs.
pub fn stride_rotations(stride: usize, pad: usize, out_w: usize) -> BTreeSet<usize> {
    let mut out: BTreeSet<usize> = (1..out_w).map(|b| (stride - 1) * b).filter(|&r| r != 0).collect();
    if pad > 0 {
        out.insert(2 * pad);
    }
    out
}
