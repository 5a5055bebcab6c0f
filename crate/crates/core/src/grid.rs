//! Dense 2D grids and the handful of operations message passing needs.
//!
//! A [`Grid2D`] stores one score map, kernel or message in row-major order.
//! A [`TensorStack`] is an ordered list of equally shaped grids, used for the
//! per-keypoint unary maps, the per-directed-edge kernels and the marginals.

use crate::error::{Error, Result};

/// Sums at or below this are treated as "no mass" by [`normalize_sum`].
pub const NORMALIZE_FLOOR: f64 = 1e-12;

/// Discrete location on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridIndex {
    pub row: usize,
    pub col: usize,
}

impl GridIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_finite(data: &[f64]) -> Result<()> {
    // branch-free pass first; it vectorizes where an early-exit scan does not
    if !data.iter().fold(false, |bad, v| bad | !v.is_finite()) {
        return Ok(());
    }
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

impl Grid2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {rows}x{cols}", rows * cols),
                found: format!("{} values", data.len()),
            });
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        assert!(value.is_finite());
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    /// A grid that is zero except for `value` at `at`.
    pub fn impulse(rows: usize, cols: usize, at: GridIndex, value: f64) -> Self {
        let mut g = Self::zeros(rows, cols);
        g.data[at.row * cols + at.col] = value;
        g
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Multiply every entry by a finite `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.data.iter().map(|v| v * factor).collect())
    }

    /// Apply `f` elementwise. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    fn shape_string(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub(crate) fn ensure_same_shape(&self, other: &Grid2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape_string(),
                found: other.shape_string(),
            });
        }
        Ok(())
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }
}

/// Ordered stack of equally shaped grids.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStack {
    rows: usize,
    cols: usize,
    planes: Vec<Grid2D>,
}

impl TensorStack {
    pub fn new(planes: Vec<Grid2D>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("tensor stack needs at least one channel".into()))?;
        let (rows, cols) = first.shape();
        for p in &planes[1..] {
            first.ensure_same_shape(p)?;
        }
        Ok(Self { rows, cols, planes })
    }

    /// Build from a flat channel-major, row-major buffer.
    pub fn from_flat(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let plane = rows.checked_mul(cols).ok_or_else(|| {
            Error::InvalidArgument(format!("dimensions {rows}x{cols} overflow"))
        })?;
        if channels == 0 {
            return Err(Error::InvalidArgument("tensor stack needs at least one channel".into()));
        }
        if data.len() != channels * plane {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {channels}x{rows}x{cols}", channels * plane),
                found: format!("{} values", data.len()),
            });
        }
        let planes = data
            .chunks_exact(plane)
            .map(|c| Grid2D::new(rows, cols, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(planes)
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(channels, rows, cols)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.planes.len(), self.rows, self.cols)
    }

    pub fn channel(&self, k: usize) -> &Grid2D {
        &self.planes[k]
    }

    pub fn planes(&self) -> &[Grid2D] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Grid2D> {
        self.planes
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Grid2D> {
        self.planes.iter()
    }

    /// Replace channel `k`; the new plane must have the stack's shape.
    pub fn set_channel(&mut self, k: usize, plane: Grid2D) -> Result<()> {
        self.planes[0].ensure_same_shape(&plane)?;
        self.planes[k] = plane;
        Ok(())
    }

    /// Flat channel-major, row-major copy of the values.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.planes.len() * self.rows * self.cols);
        for p in &self.planes {
            out.extend_from_slice(p.as_slice());
        }
        out
    }

    pub fn map_planes(&self, f: impl Fn(&Grid2D) -> Result<Grid2D>) -> Result<Self> {
        Self::new(self.planes.iter().map(f).collect::<Result<Vec<_>>>()?)
    }

    pub(crate) fn ensure_same_shape(&self, other: &TensorStack) -> Result<()> {
        if self.shape() != other.shape() {
            let (a, b, c) = self.shape();
            let (x, y, z) = other.shape();
            return Err(Error::ShapeMismatch {
                expected: format!("{a}x{b}x{c}"),
                found: format!("{x}x{y}x{z}"),
            });
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a TensorStack {
    type Item = &'a Grid2D;
    type IntoIter = std::slice::Iter<'a, Grid2D>;

    fn into_iter(self) -> Self::IntoIter {
        self.planes.iter()
    }
}

pub(crate) fn ensure_odd_kernel(k: &Grid2D) -> Result<()> {
    if k.rows() % 2 == 0 || k.cols() % 2 == 0 {
        return Err(Error::InvalidKernel(format!(
            "kernel dimensions must be odd, got {}x{}",
            k.rows(),
            k.cols()
        )));
    }
    Ok(())
}

/// Same-size 2D convolution with zero padding.
///
/// `out[y][x] = sum over (dy, dx) of h[y - dy][x - dx] * k[cr + dy][cc + dx]`
/// where `(cr, cc)` is the kernel center. This is a true convolution: a kernel
/// impulse at offset `(dy, dx)` from the center shifts `h` by `(dy, dx)`.
///
/// Every output cell accumulates its terms in kernel row-major order, so the
/// result is bitwise reproducible.
pub fn conv2d_same(h: &Grid2D, k: &Grid2D) -> Result<Grid2D> {
    ensure_odd_kernel(k)?;
    let (rows, cols) = h.shape();
    let (kr, kc) = k.shape();
    let (cr, cc) = ((kr - 1) / 2, (kc - 1) / 2);
    let hd = h.as_slice();
    let mut out = vec![0.0f64; rows * cols];

    // Scatter form: for each kernel tap, add a shifted copy of h. The inner
    // loop runs over independent output cells.
    for ki in 0..kr {
        let dy = ki as isize - cr as isize;
        let y0 = dy.max(0) as usize;
        let y1 = (rows as isize + dy).min(rows as isize);
        if y1 <= y0 as isize {
            continue;
        }
        let y1 = y1 as usize;
        for kj in 0..kc {
            let w = k.get(ki, kj);
            if w == 0.0 {
                continue;
            }
            let dx = kj as isize - cc as isize;
            let x0 = dx.max(0) as usize;
            let x1 = (cols as isize + dx).min(cols as isize);
            if x1 <= x0 as isize {
                continue;
            }
            let x1 = x1 as usize;
            let sx0 = (x0 as isize - dx) as usize;
            let span = x1 - x0;
            for y in y0..y1 {
                let sy = (y as isize - dy) as usize;
                let src = &hd[sy * cols + sx0..sy * cols + sx0 + span];
                let dst = &mut out[y * cols + x0..y * cols + x0 + span];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    Grid2D::new(rows, cols, out)
}

/// Point reflection through the center: `out[r][c] = k[rows-1-r][cols-1-c]`.
pub fn reflect180(k: &Grid2D) -> Result<Grid2D> {
    ensure_odd_kernel(k)?;
    let mut data = k.as_slice().to_vec();
    data.reverse();
    Ok(Grid2D::from_raw(k.rows(), k.cols(), data))
}

/// Divide by the total. A grid with (almost) no mass becomes uniform.
pub fn normalize_sum(g: &Grid2D) -> Result<Grid2D> {
    if let Some(i) = g.as_slice().iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidPotential(format!(
            "negative entry {} at linear index {i}",
            g.as_slice()[i]
        )));
    }
    let total = g.sum();
    if total > NORMALIZE_FLOOR {
        g.map(|v| v / total)
    } else {
        Ok(Grid2D::filled(g.rows(), g.cols(), 1.0 / g.len() as f64))
    }
}

/// Like [`normalize_sum`], but first rescales by the maximum so that grids
/// whose total mass is tiny but nonzero still normalize instead of falling
/// back to uniform. Only an all-zero grid becomes uniform.
pub fn normalize_rescaled(g: &Grid2D) -> Result<Grid2D> {
    let peak = g.max();
    if peak > 0.0 && peak.is_finite() && peak != 1.0 {
        normalize_sum(&g.map(|v| v / peak)?)
    } else {
        normalize_sum(g)
    }
}

/// Elementwise product of one or more equally shaped grids.
pub fn hadamard(gs: &[&Grid2D]) -> Result<Grid2D> {
    let (first, rest) = gs
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("hadamard needs at least one grid".into()))?;
    let mut out = (*first).clone();
    for g in rest {
        out.ensure_same_shape(g)?;
        for (o, v) in out.data.iter_mut().zip(g.as_slice()) {
            *o *= v;
        }
    }
    check_finite(out.as_slice())?;
    Ok(out)
}

/// Location of the largest value; ties go to the smallest row-major index.
pub fn argmax_cell(g: &Grid2D) -> GridIndex {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in g.as_slice().iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    GridIndex::new(best / g.cols(), best % g.cols())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Grid2D {
        Grid2D::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    // Straight transcription of the defining sum, used as the reference.
    fn naive_conv(h: &Grid2D, k: &Grid2D) -> Grid2D {
        let (cr, cc) = ((k.rows() as isize - 1) / 2, (k.cols() as isize - 1) / 2);
        Grid2D::from_fn(h.rows(), h.cols(), |y, x| {
            let mut acc = 0.0;
            for dy in -cr..=cr {
                for dx in -cc..=cc {
                    let sy = y as isize - dy;
                    let sx = x as isize - dx;
                    if sy < 0 || sx < 0 || sy >= h.rows() as isize || sx >= h.cols() as isize {
                        continue;
                    }
                    acc += h.get(sy as usize, sx as usize) * k.get((cr + dy) as usize, (cc + dx) as usize);
                }
            }
            acc
        })
        .unwrap()
    }

    fn naive_xcorr(h: &Grid2D, k: &Grid2D) -> Grid2D {
        let (cr, cc) = ((k.rows() as isize - 1) / 2, (k.cols() as isize - 1) / 2);
        Grid2D::from_fn(h.rows(), h.cols(), |y, x| {
            let mut acc = 0.0;
            for dy in -cr..=cr {
                for dx in -cc..=cc {
                    let sy = y as isize + dy;
                    let sx = x as isize + dx;
                    if sy < 0 || sx < 0 || sy >= h.rows() as isize || sx >= h.cols() as isize {
                        continue;
                    }
                    acc += h.get(sy as usize, sx as usize) * k.get((cr + dy) as usize, (cc + dx) as usize);
                }
            }
            acc
        })
        .unwrap()
    }

    fn max_abs_diff(a: &Grid2D, b: &Grid2D) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn centered_impulse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_grid(&mut rng, 5, 5);
        let k = Grid2D::impulse(3, 3, GridIndex::new(1, 1), 1.0);
        assert_eq!(conv2d_same(&h, &k).unwrap(), h);
    }

    #[test]
    fn impulse_offset_shifts_forward() {
        let h = Grid2D::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let k = Grid2D::impulse(1, 3, GridIndex::new(0, 2), 1.0);
        assert_eq!(conv2d_same(&h, &k).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn matches_naive_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let h = random_grid(&mut rng, 7, 7);
            let k = random_grid(&mut rng, 5, 5);
            let fast = conv2d_same(&h, &k).unwrap();
            assert!(max_abs_diff(&fast, &naive_conv(&h, &k)) <= 1e-12);
        }
    }

    #[test]
    fn kernel_larger_than_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_grid(&mut rng, 2, 4);
        let k = random_grid(&mut rng, 7, 9);
        assert!(max_abs_diff(&conv2d_same(&h, &k).unwrap(), &naive_conv(&h, &k)) <= 1e-12);
    }

    #[test]
    fn reflected_kernel_gives_cross_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let h = random_grid(&mut rng, 6, 8);
            let k = random_grid(&mut rng, 3, 5);
            let got = conv2d_same(&h, &reflect180(&k).unwrap()).unwrap();
            assert!(max_abs_diff(&got, &naive_xcorr(&h, &k)) <= 1e-12);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let h = Grid2D::zeros(4, 4);
        let k = Grid2D::zeros(2, 3);
        assert!(matches!(conv2d_same(&h, &k), Err(Error::InvalidKernel(_))));
        assert!(matches!(reflect180(&k), Err(Error::InvalidKernel(_))));
    }

    #[test]
    fn reflect_examples() {
        let k = Grid2D::impulse(3, 3, GridIndex::new(1, 2), 1.0);
        assert_eq!(reflect180(&k).unwrap(), Grid2D::impulse(3, 3, GridIndex::new(1, 0), 1.0));

        let g = Grid2D::from_fn(5, 5, |r, c| {
            let (dr, dc) = (r as f64 - 2.0, c as f64 - 2.0);
            (-(dr * dr + dc * dc) / 2.0).exp()
        })
        .unwrap();
        assert_eq!(reflect180(&g).unwrap(), g);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_grid(&mut rng, 5, 3);
        assert_eq!(reflect180(&reflect180(&k).unwrap()).unwrap(), k);
    }

    #[test]
    fn normalize_examples() {
        let g = Grid2D::new(1, 2, vec![2.0, 2.0]).unwrap();
        assert_eq!(normalize_sum(&g).unwrap().as_slice(), &[0.5, 0.5]);

        let z = normalize_sum(&Grid2D::zeros(4, 4)).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 1.0 / 16.0));

        let neg = Grid2D::new(1, 2, vec![1.0, -0.1]).unwrap();
        assert!(matches!(normalize_sum(&neg), Err(Error::InvalidPotential(_))));
    }

    #[test]
    fn rescaled_normalization_keeps_tiny_mass() {
        let g = Grid2D::new(1, 3, vec![1e-200, 3e-200, 0.0]).unwrap();
        assert_eq!(normalize_sum(&g).unwrap().as_slice(), &[1.0 / 3.0; 3]);
        let n = normalize_rescaled(&g).unwrap();
        assert!((n.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((n.get(0, 1) - 0.75).abs() < 1e-15);
        assert_eq!(n.get(0, 2), 0.0);
    }

    #[test]
    fn hadamard_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_grid(&mut rng, 3, 4);
        let b = random_grid(&mut rng, 3, 4);
        assert_eq!(hadamard(&[&a]).unwrap(), a);
        assert_eq!(hadamard(&[&a, &Grid2D::filled(3, 4, 1.0)]).unwrap(), a);
        let p = hadamard(&[&a, &b]).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(p.get(r, c), a.get(r, c) * b.get(r, c));
            }
        }
        assert!(matches!(
            hadamard(&[&a, &Grid2D::zeros(4, 3)]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(hadamard(&[]).is_err());
    }

    #[test]
    fn argmax_examples() {
        let g = Grid2D::impulse(5, 4, GridIndex::new(3, 1), 2.0);
        assert_eq!(argmax_cell(&g), GridIndex::new(3, 1));
        assert_eq!(argmax_cell(&Grid2D::filled(4, 4, 0.3)), GridIndex::new(0, 0));
        let mut d = vec![0.0; 3 * 6];
        d[5] = 1.0;
        d[2 * 6 + 1] = 1.0;
        assert_eq!(argmax_cell(&Grid2D::new(3, 6, d).unwrap()), GridIndex::new(0, 5));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Grid2D::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        let g = Grid2D::filled(1, 1, 1e300);
        assert!(g.scaled(1e300).is_err());
    }

    #[test]
    fn stack_requires_uniform_shapes() {
        assert!(TensorStack::new(vec![Grid2D::zeros(2, 2), Grid2D::zeros(2, 3)]).is_err());
        assert!(TensorStack::new(vec![]).is_err());
        let s = TensorStack::from_flat(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.shape(), (2, 1, 2));
        assert_eq!(s.channel(1).as_slice(), &[3.0, 4.0]);
        assert_eq!(s.to_flat(), vec![1.0, 2.0, 3.0, 4.0]);
    }
}
