//! Frequency-domain evaluation of [`conv2d_same`](crate::grid::conv2d_same).
//!
//! Results agree with the direct path to within floating point round-off
//! (about 1e-15 of the largest output value). Entries that should be exactly
//! zero come back as round-off noise of either sign, so callers that need
//! nonnegative output clamp it.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{ensure_odd_kernel, Grid2D};

/// Smallest 5-smooth length at which circular convolution still yields
/// the centered window uncorrupted. Wrap-around only has to miss output
/// indices `cr..cr + n`, so `n + cr` suffices rather than `n + k - 1`.
fn transform_len(n: usize, k: usize) -> usize {
    let mut len = (n + (k - 1) / 2).max(k);
    loop {
        let mut m = len;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return len;
        }
        len += 1;
    }
}

/// Reusable buffers, so repeated convolutions do not allocate.
#[derive(Default)]
struct Workspace {
    rows: Vec<Complex64>,
    cols: Vec<Complex64>,
    spectrum: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

/// Plans for one (grid shape, kernel shape) combination. Reusable across
/// any number of convolutions of that shape. Holds scratch buffers behind a
/// `RefCell`, so each thread needs its own instance.
pub struct FftConvolver {
    rows: usize,
    cols: usize,
    krows: usize,
    kcols: usize,
    // padded transform size
    prow: usize,
    pcol: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    work: RefCell<Workspace>,
}

impl std::fmt::Debug for FftConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftConvolver")
            .field("grid", &(self.rows, self.cols))
            .field("kernel", &(self.krows, self.kcols))
            .field("padded", &(self.prow, self.pcol))
            .finish()
    }
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

impl FftConvolver {
    pub fn new(rows: usize, cols: usize, krows: usize, kcols: usize) -> Self {
        let prow = transform_len(rows, krows);
        let pcol = transform_len(cols, kcols);
        let mut planner = FftPlanner::<f64>::new();
        let (row_fwd, row_inv) = (planner.plan_fft_forward(pcol), planner.plan_fft_inverse(pcol));
        let (col_fwd, col_inv) = (planner.plan_fft_forward(prow), planner.plan_fft_inverse(prow));
        let scratch = [&row_fwd, &row_inv, &col_fwd, &col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        let work = Workspace {
            rows: vec![ZERO; rows.max(krows) * pcol],
            cols: vec![ZERO; prow * pcol],
            spectrum: vec![ZERO; prow * pcol],
            scratch: vec![ZERO; scratch],
        };
        Self {
            rows,
            cols,
            krows,
            kcols,
            prow,
            pcol,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            work: RefCell::new(work),
        }
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn kernel_shape(&self) -> (usize, usize) {
        (self.krows, self.kcols)
    }

    /// Forward 2D transform of `h + i k`, both zero-padded to the transform
    /// size, left in `w.cols` column-major (`pcol` columns of length `prow`).
    fn forward_packed(&self, w: &mut Workspace, h: &Grid2D, k: &Grid2D) {
        let used = h.rows().max(k.rows());
        let rows = &mut w.rows[..used * self.pcol];
        rows.fill(ZERO);
        for r in 0..h.rows() {
            for (dst, &v) in rows[r * self.pcol..].iter_mut().zip(h.row(r)) {
                dst.re = v;
            }
        }
        for r in 0..k.rows() {
            for (dst, &v) in rows[r * self.pcol..].iter_mut().zip(k.row(r)) {
                dst.im = v;
            }
        }
        // rows past `used` are zero and transform to zero
        self.row_fwd.process_with_scratch(rows, &mut w.scratch);
        w.cols.fill(ZERO);
        for r in 0..used {
            for (c, &z) in rows[r * self.pcol..(r + 1) * self.pcol].iter().enumerate() {
                w.cols[c * self.prow + r] = z;
            }
        }
        self.col_fwd.process_with_scratch(&mut w.cols, &mut w.scratch);
    }

    pub fn conv2d_same(&self, h: &Grid2D, k: &Grid2D) -> Result<Grid2D> {
        ensure_odd_kernel(k)?;
        for (what, g, shape) in [("grid", h, (self.rows, self.cols)), ("kernel", k, (self.krows, self.kcols))] {
            if g.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: format!("{what} {}x{}", shape.0, shape.1),
                    found: format!("{}x{}", g.rows(), g.cols()),
                });
            }
        }
        let mut guard = self.work.borrow_mut();
        let w = &mut *guard;
        self.forward_packed(w, h, k);

        // With Z = F(h + i k): F(h) = (Z[f] + conj Z[-f]) / 2 and
        // F(k) = (Z[f] - conj Z[-f]) / 2i, so their product is
        // (Z[f]^2 - conj(Z[-f])^2) / 4i.
        let quarter_over_i = Complex64::new(0.0, -0.25);
        for c in 0..self.pcol {
            let nc = (self.pcol - c) % self.pcol;
            let (col, mirror) = (&w.cols[c * self.prow..(c + 1) * self.prow], &w.cols[nc * self.prow..(nc + 1) * self.prow]);
            let out = &mut w.spectrum[c * self.prow..(c + 1) * self.prow];
            for r in 0..self.prow {
                let a = col[r];
                let b = mirror[if r == 0 { 0 } else { self.prow - r }].conj();
                out[r] = (a * a - b * b) * quarter_over_i;
            }
        }
        self.col_inv.process_with_scratch(&mut w.spectrum, &mut w.scratch);

        // Linear convolution C has out[y][x] = C[y + cr][x + cc]; the circular
        // result equals C on that window.
        let (cr, cc) = ((self.krows - 1) / 2, (self.kcols - 1) / 2);
        let rows = &mut w.rows[..self.rows * self.pcol];
        for y in 0..self.rows {
            for c in 0..self.pcol {
                rows[y * self.pcol + c] = w.spectrum[c * self.prow + y + cr];
            }
        }
        self.row_inv.process_with_scratch(rows, &mut w.scratch);
        let scale = 1.0 / (self.prow * self.pcol) as f64;
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for y in 0..self.rows {
            let line = &rows[y * self.pcol + cc..y * self.pcol + cc + self.cols];
            out.extend(line.iter().map(|z| z.re * scale));
        }
        Grid2D::new(self.rows, self.cols, out)
    }
}
