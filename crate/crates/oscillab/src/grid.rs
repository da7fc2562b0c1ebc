//! Uniform grids, axis boxes, FFTs and band-limited interpolation.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Axis-aligned box in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Shape("box lo/hi dimension mismatch".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::Domain("box must have positive volume".into()));
        }
        Ok(AxisBox { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        AxisBox {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    /// Cube `[-h, h]^d`.
    pub fn centered(dim: usize, h: f64) -> Self {
        AxisBox {
            lo: vec![-h; dim],
            hi: vec![h; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (a, b))| *x >= *a && *x <= *b)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// All `2^d` corners.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|i| if mask >> i & 1 == 0 { self.lo[i] } else { self.hi[i] })
                    .collect()
            })
            .collect()
    }

    /// Volume of the intersection with another box.
    pub fn overlap_volume(&self, other: &AxisBox) -> f64 {
        let mut v = 1.0;
        for i in 0..self.dim() {
            let lo = self.lo[i].max(other.lo[i]);
            let hi = self.hi[i].min(other.hi[i]);
            if hi <= lo {
                return 0.0;
            }
            v *= hi - lo;
        }
        v
    }

    pub fn dilate(&self, factor: f64) -> AxisBox {
        let c = self.center();
        AxisBox {
            lo: c
                .iter()
                .zip(&self.lo)
                .map(|(c, a)| c + factor * (a - c))
                .collect(),
            hi: c
                .iter()
                .zip(&self.hi)
                .map(|(c, b)| c + factor * (b - c))
                .collect(),
        }
    }
}

/// Row-major index walker over a rectangular shape (last axis fastest).
pub fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize], usize)) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..total {
        f(&idx, flat);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

/// Samples of a complex-valued function on a uniform grid over an axis box.
///
/// Sample `i` along an axis of `N` cells sits at `lo + i*side/N` (left
/// endpoints); with the periodic-smooth conventions used throughout, the
/// rectangle sum over these nodes is the tensor trapezoid rule.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub shape: Vec<usize>,
    pub samples: Vec<Complex64>,
    pub domain: AxisBox,
}

impl GridFunction {
    pub fn new(shape: Vec<usize>, samples: Vec<Complex64>, domain: AxisBox) -> Result<Self> {
        let total: usize = shape.iter().product();
        if total != samples.len() {
            return Err(Error::Shape(format!(
                "shape product {} != samples length {}",
                total,
                samples.len()
            )));
        }
        if shape.len() != domain.dim() {
            return Err(Error::Shape("shape/domain dimension mismatch".into()));
        }
        Ok(GridFunction {
            shape,
            samples,
            domain,
        })
    }

    pub fn zeros(shape: Vec<usize>, domain: AxisBox) -> Self {
        let total: usize = shape.iter().product();
        GridFunction {
            shape,
            samples: vec![Complex64::new(0.0, 0.0); total],
            domain,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Grid node for a multi-index.
    pub fn node(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(ax, i)| {
                self.domain.lo[ax] + self.domain.side(ax) * (*i as f64) / (self.shape[ax] as f64)
            })
            .collect()
    }

    pub fn from_fn(shape: Vec<usize>, domain: AxisBox, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let mut g = GridFunction::zeros(shape, domain);
        let nodes: Vec<Vec<f64>> = {
            let mut v = Vec::with_capacity(g.len());
            for_each_index(&g.shape, |idx, _| v.push(g.node(idx)));
            v
        };
        for (s, p) in g.samples.iter_mut().zip(&nodes) {
            *s = f(p);
        }
        g
    }

    /// Cell volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.domain.volume() / self.len() as f64
    }

    /// L2 norm over the domain by the rectangle (periodic trapezoid) rule.
    pub fn l2_norm(&self) -> f64 {
        (self
            .samples
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            * self.cell_volume())
        .sqrt()
    }

    /// Forward DFT along every axis (unnormalized), returning coefficients
    /// indexed like the samples.
    pub fn fft(&self) -> Vec<Complex64> {
        let mut data = self.samples.clone();
        fft_nd(&mut data, &self.shape, false);
        data
    }

    /// Inverse of [`GridFunction::fft`] (divides by the total size).
    pub fn ifft_into(&mut self, mut coeffs: Vec<Complex64>) {
        fft_nd(&mut coeffs, &self.shape, true);
        let scale = 1.0 / self.len() as f64;
        for z in coeffs.iter_mut() {
            *z *= scale;
        }
        self.samples = coeffs;
    }

    /// Signed frequency (cycles per unit length) of DFT bin `k` along `axis`.
    pub fn frequency(&self, axis: usize, k: usize) -> f64 {
        let n = self.shape[axis] as i64;
        let k = k as i64;
        let signed = if k <= n / 2 { k } else { k - n };
        signed as f64 / self.domain.side(axis)
    }
}

/// In-place n-dimensional FFT by row-column sweeps.
fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let total: usize = shape.iter().product();
    debug_assert_eq!(total, data.len());
    let d = shape.len();
    // stride of the last axis is 1; axis `a` has stride prod(shape[a+1..])
    for ax in 0..d {
        let n = shape[ax];
        if n == 1 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride: usize = shape[ax + 1..].iter().product();
        let lines = total / n;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for line in 0..lines {
            // decompose line index into (outer, inner) around the axis
            let inner = line % stride;
            let outer = line / stride;
            let base = outer * stride * n + inner;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = data[base + j * stride];
            }
            fft.process(&mut buf);
            for (j, b) in buf.iter().enumerate() {
                data[base + j * stride] = *b;
            }
        }
    }
}

/// A trigonometric polynomial `sum_k c_k e^{2 pi i k.w}` with integer
/// frequencies, treated as a 1-periodic function per axis of its box.
///
/// Used to evaluate grid data at off-grid points without aliasing: smooth
/// test inputs are genuinely band-limited, so this interpolation is exact.
#[derive(Debug, Clone)]
pub struct TrigPoly {
    pub dim: usize,
    /// (integer frequency vector, coefficient)
    pub modes: Vec<(Vec<i64>, Complex64)>,
    pub domain: AxisBox,
}

impl TrigPoly {
    pub fn constant(dim: usize, c: Complex64, domain: AxisBox) -> Self {
        TrigPoly {
            dim,
            modes: vec![(vec![0; dim], c)],
            domain,
        }
    }

    /// Extract modes with `|k|_inf <= band` from grid samples.
    /// Modes with relative magnitude below `drop_tol` are discarded.
    pub fn from_grid(g: &GridFunction, band: usize, drop_tol: f64) -> Result<Self> {
        for &n in &g.shape {
            if n < 2 * band + 2 {
                return Err(Error::Resolution(format!(
                    "grid of {n} cells cannot resolve band {band}"
                )));
            }
        }
        let coeffs = g.fft();
        let scale = 1.0 / g.len() as f64;
        let mut modes = Vec::new();
        let mut max_mag: f64 = 0.0;
        for_each_index(&g.shape, |idx, flat| {
            let mut k = Vec::with_capacity(g.dim());
            let mut inside = true;
            for (ax, &i) in idx.iter().enumerate() {
                let n = g.shape[ax] as i64;
                let s = if (i as i64) <= n / 2 {
                    i as i64
                } else {
                    i as i64 - n
                };
                if s.unsigned_abs() as usize > band {
                    inside = false;
                    break;
                }
                k.push(s);
            }
            if inside {
                let c = coeffs[flat] * scale;
                max_mag = max_mag.max(c.norm());
                modes.push((k, c));
            }
        });
        let keep = max_mag * drop_tol;
        modes.retain(|(_, c)| c.norm() >= keep);
        Ok(TrigPoly {
            dim: g.dim(),
            modes,
            domain: g.domain.clone(),
        })
    }

    /// Evaluate at a point (coordinates in the box; periodic extension).
    pub fn eval(&self, w: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in &self.modes {
            let mut phase = 0.0;
            for (ax, kk) in k.iter().enumerate() {
                let u = (w[ax] - self.domain.lo[ax]) / self.domain.side(ax);
                phase += *kk as f64 * u;
            }
            acc += c * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * phase);
        }
        acc
    }

    /// Largest `|k|_inf` present.
    pub fn band(&self) -> usize {
        self.modes
            .iter()
            .map(|(k, _)| k.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fft_roundtrip_2d() {
        let domain = AxisBox::unit(2);
        let g = GridFunction::from_fn(vec![8, 16], domain, |p| {
            Complex64::new((p[0] * 3.0).sin(), (p[1] * 5.0).cos())
        });
        let mut h = g.clone();
        let coeffs = g.fft();
        h.ifft_into(coeffs);
        for (a, b) in g.samples.iter().zip(&h.samples) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-12);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_mode_is_recovered() {
        let domain = AxisBox::unit(1);
        let g = GridFunction::from_fn(vec![32], domain, |p| {
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * 3.0 * p[0])
        });
        let coeffs = g.fft();
        // bin 3 carries everything
        assert_relative_eq!(coeffs[3].re / 32.0, 1.0, epsilon = 1e-12);
        for (k, c) in coeffs.iter().enumerate() {
            if k != 3 {
                assert!(c.norm() < 1e-10, "stray energy in bin {k}");
            }
        }
    }

    #[test]
    fn trig_poly_interpolates_off_grid() {
        let domain = AxisBox::unit(2);
        let f = |p: &[f64]| {
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (2.0 * p[0] - p[1]))
                + Complex64::new(0.5, 0.0)
        };
        let g = GridFunction::from_fn(vec![16, 16], domain, |p| f(p));
        let tp = TrigPoly::from_grid(&g, 4, 1e-12).unwrap();
        let p = [0.137, 0.709];
        let v = tp.eval(&p);
        let expect = f(&p);
        assert_relative_eq!(v.re, expect.re, epsilon = 1e-10);
        assert_relative_eq!(v.im, expect.im, epsilon = 1e-10);
    }

    #[test]
    fn box_overlap() {
        let a = AxisBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let b = AxisBox::new(vec![1.0, 1.0], vec![3.0, 4.0]).unwrap();
        assert_relative_eq!(a.overlap_volume(&b), 1.0);
        let c = AxisBox::new(vec![5.0, 5.0], vec![6.0, 6.0]).unwrap();
        assert_eq!(a.overlap_volume(&c), 0.0);
    }
}
