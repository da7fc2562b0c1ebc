//! The phase function `phi^lambda`, its closed-form derivatives, the
//! pseudo-conformal change of variables, the induction scale ladder and the
//! smooth cutoffs built on top of them.
//!
//! Everything here is a pure function of the scale parameter `lambda`, the
//! box constant `c_n` and the evaluation point; the formulas are
//!
//! ```text
//! phi(x, t; w) = (lambda / t) * sqrt(lambda^2 + |x - t w|^2)
//! ```
//!
//! with the distinguished time-like coordinate `t` (never zero) and
//! `x, w` in `R^{n-1}`.

use crate::error::{Error, Result};

/// A point `(x, t)` with spatial part `x` in `R^{n-1}` and time-like `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: Vec<f64>, t: f64) -> Self {
        SpaceTimePoint { x, t }
    }

    /// Ambient dimension `n`.
    pub fn ambient_dim(&self) -> usize {
        self.x.len() + 1
    }

    pub fn as_vec(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.push(self.t);
        v
    }
}

/// Scale parameter `lambda` plus the support-box constant `C_n`.
#[derive(Debug, Clone, Copy)]
pub struct PhaseField {
    lambda: f64,
    c_n: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PhaseField {
    pub fn new(lambda: f64, c_n: f64) -> Result<Self> {
        if !(lambda >= 1.0) {
            return Err(Error::Domain(format!("lambda must be >= 1, got {lambda}")));
        }
        if !(c_n >= 1.0) {
            return Err(Error::Domain(format!("c_n must be >= 1, got {c_n}")));
        }
        Ok(PhaseField { lambda, c_n })
    }

    /// Default box constant 4 ("large enough").
    pub fn with_default_cn(lambda: f64) -> Result<Self> {
        PhaseField::new(lambda, 4.0)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn c_n(&self) -> f64 {
        self.c_n
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if t == 0.0 {
            return Err(Error::Domain("phase evaluated at t = 0".into()));
        }
        Ok(())
    }

    /// `x - t w` and `sqrt(lambda^2 + |x - t w|^2)`.
    fn offset(&self, p: &SpaceTimePoint, omega: &[f64]) -> (Vec<f64>, f64) {
        let u: Vec<f64> = p
            .x
            .iter()
            .zip(omega)
            .map(|(xi, wi)| xi - p.t * wi)
            .collect();
        let s = (self.lambda * self.lambda + dot(&u, &u)).sqrt();
        (u, s)
    }

    /// `phi(x, t; w) = (lambda/t) sqrt(lambda^2 + |x - t w|^2)`.
    pub fn phase(&self, p: &SpaceTimePoint, omega: &[f64]) -> Result<f64> {
        self.check_t(p.t)?;
        let (_, s) = self.offset(p, omega);
        Ok(self.lambda / p.t * s)
    }

    /// Spatial gradient `(lambda/t) (x - t w) / sqrt(lambda^2 + |x - t w|^2)`.
    pub fn phase_grad_x(&self, p: &SpaceTimePoint, omega: &[f64]) -> Result<Vec<f64>> {
        self.check_t(p.t)?;
        let (u, s) = self.offset(p, omega);
        Ok(u.iter().map(|ui| self.lambda / p.t * ui / s).collect())
    }

    /// `d/dt phi = -(lambda/t^2) (lambda^2 + x.(x - t w)) / sqrt(...)`.
    pub fn phase_dt(&self, p: &SpaceTimePoint, omega: &[f64]) -> Result<f64> {
        self.check_t(p.t)?;
        let (u, s) = self.offset(p, omega);
        let num = self.lambda * self.lambda + dot(&p.x, &u);
        Ok(-self.lambda / (p.t * p.t) * num / s)
    }

    /// Full space-time gradient `(grad_x phi, d_t phi)` in `R^n`.
    pub fn phase_grad_xt(&self, p: &SpaceTimePoint, omega: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.phase_grad_x(p, omega)?;
        g.push(self.phase_dt(p, omega)?);
        Ok(g)
    }

    /// Frequency gradient `lambda (t w - x) / sqrt(lambda^2 + |x - t w|^2)`.
    pub fn phase_grad_omega(&self, p: &SpaceTimePoint, omega: &[f64]) -> Result<Vec<f64>> {
        self.check_t(p.t)?;
        let (u, s) = self.offset(p, omega);
        Ok(u.iter().map(|ui| -self.lambda * ui / s).collect())
    }

    /// Mixed Hessian `d_{x_i} d_{w_j} phi`, an `(n-1) x (n-1)` matrix:
    /// `lambda [u u^T - (lambda^2 + |u|^2) I] / (lambda^2 + |u|^2)^{3/2}`
    /// with `u = x - t w`.
    pub fn phase_mixed_hessian(&self, p: &SpaceTimePoint, omega: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_t(p.t)?;
        let (u, s) = self.offset(p, omega);
        let d = u.len();
        let s2 = s * s;
        let s3 = s2 * s;
        let mut m = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                let mut v = self.lambda * u[i] * u[j] / s3;
                if i == j {
                    v -= self.lambda * s2 / s3;
                }
                m[i][j] = v;
            }
        }
        Ok(m)
    }

    /// Mixed `t`-row: `d_t d_{w_j} phi`.
    pub fn phase_dt_grad_omega(&self, p: &SpaceTimePoint, omega: &[f64]) -> Result<Vec<f64>> {
        self.check_t(p.t)?;
        let (u, s) = self.offset(p, omega);
        let s3 = s * s * s;
        let xu = dot(&p.x, &u);
        let wu = dot(omega, &u);
        let l2 = self.lambda * self.lambda;
        Ok((0..u.len())
            .map(|j| self.lambda * (omega[j] * l2 + omega[j] * xu - p.x[j] * wu) / s3)
            .collect())
    }

    /// Closed form of `|det phase_mixed_hessian|`.
    ///
    /// The mixed Hessian has one eigenvalue `-lambda^3 (lambda^2+|u|^2)^{-3/2}`
    /// (along `u`) and `n-2` eigenvalues `-lambda (lambda^2+|u|^2)^{-1/2}`, so
    /// the absolute determinant is
    /// `lambda^{n+1} (lambda^2 + |u|^2)^{-(n+1)/2}`; it equals 1 exactly at
    /// `x = t w`.
    pub fn mixed_hessian_det(&self, p: &SpaceTimePoint, omega: &[f64]) -> Result<f64> {
        self.check_t(p.t)?;
        let n = p.ambient_dim();
        let (_, s) = self.offset(p, omega);
        Ok((self.lambda / s).powi(n as i32 + 1))
    }

    /// Re-centered phase `phi(x; w) - phi(x0; w)`.
    pub fn phase_diff(
        &self,
        p: &SpaceTimePoint,
        center: &SpaceTimePoint,
        omega: &[f64],
    ) -> Result<f64> {
        Ok(self.phase(p, omega)? - self.phase(center, omega)?)
    }

    /// Re-centered frequency gradient
    /// `grad_w phi(x; w) - grad_w phi(x0; w)`.
    pub fn phase_grad_omega_diff(
        &self,
        p: &SpaceTimePoint,
        center: &SpaceTimePoint,
        omega: &[f64],
    ) -> Result<Vec<f64>> {
        let a = self.phase_grad_omega(p, omega)?;
        let b = self.phase_grad_omega(center, omega)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
    }

    /// Second-order Taylor remainder of the phase about `x0`:
    /// `phi(x; w) - phi(x0; w) - grad_{x,t} phi(x0; w) . (x - x0)`.
    pub fn taylor_remainder(
        &self,
        center: &SpaceTimePoint,
        p: &SpaceTimePoint,
        omega: &[f64],
    ) -> Result<f64> {
        let g = self.phase_grad_xt(center, omega)?;
        let dx: Vec<f64> = p
            .as_vec()
            .iter()
            .zip(center.as_vec().iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(self.phase(p, omega)? - self.phase(center, omega)? - dot(&g, &dx))
    }
}

/// Forward pseudo-conformal map `(x', x_n) -> (x'/x_n, 1/x_n)`.
pub fn pseudo_forward(x_prime: &[f64], x_n: f64) -> Result<(Vec<f64>, f64)> {
    if x_n == 0.0 {
        return Err(Error::Domain("pseudo_forward at x_n = 0".into()));
    }
    Ok((x_prime.iter().map(|v| v / x_n).collect(), 1.0 / x_n))
}

/// Inverse map `(u, t) -> (u/t, 1/t)`; `pseudo_inverse . pseudo_forward = id`.
pub fn pseudo_inverse(u: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
    if t == 0.0 {
        return Err(Error::Domain("pseudo_inverse at t = 0".into()));
    }
    Ok((u.iter().map(|v| v / t).collect(), 1.0 / t))
}

/// The induction scale `lambda_{K,R}`, always within `[C_n l, 3 C_n l]`.
#[derive(Debug, Clone, Copy)]
pub struct ScaleLadder {
    pub k_param: u32,
    pub r: f64,
    pub lambda: f64,
    pub value: f64,
}

/// `lambda_{K,R} = C_n lambda` when `lambda/R < K`, else
/// `C_n lambda (2 + 1/K + ... + 1/K^{floor(log_K(lambda/R)) - 1})`.
pub fn scale_ladder(k: u32, r: f64, lambda: f64, c_n: f64) -> Result<ScaleLadder> {
    if k < 2 {
        return Err(Error::Argument(format!("K must be >= 2, got {k}")));
    }
    if !(1.0 <= r && r <= lambda) {
        return Err(Error::Argument(format!(
            "need 1 <= R <= lambda, got R = {r}, lambda = {lambda}"
        )));
    }
    let ratio = lambda / r;
    let kf = k as f64;
    let value = if ratio < kf {
        c_n * lambda
    } else {
        let m = (ratio.ln() / kf.ln()).floor() as i64;
        // guard against floating point landing just below an integer
        let m = if kf.powi(m as i32 + 1) <= ratio * (1.0 + 1e-12) {
            m + 1
        } else {
            m
        };
        let mut sum = 2.0;
        let mut pw = 1.0;
        for _ in 1..m {
            pw /= kf;
            sum += pw;
        }
        c_n * lambda * sum
    };
    Ok(ScaleLadder {
        k_param: k,
        r,
        lambda,
        value,
    })
}

/// `exp(-1/y)` for `y > 0`, else 0; the standard `C^inf` germ.
fn cinf_germ(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        (-1.0 / y).exp()
    }
}

/// `C^inf` step: 0 for `y <= 0`, 1 for `y >= 1`, strictly increasing between.
pub fn smooth_step(y: f64) -> f64 {
    let a = cinf_germ(y);
    let b = cinf_germ(1.0 - y);
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        1.0
    } else {
        a / (a + b)
    }
}

/// Ninth-order polynomial step (C^4 at both ends). Compared with the
/// `exp(-1/y)` step it trades infinite smoothness for much smaller
/// mid-band Fourier tails, which is what the packet coefficient windows
/// actually see.
pub fn poly_step(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y >= 1.0 {
        1.0
    } else {
        let y2 = y * y;
        let y4 = y2 * y2;
        ((((70.0 * y - 315.0) * y + 540.0) * y - 420.0) * y + 126.0) * y4 * y
    }
}

/// One-dimensional `C^inf` plateau bump: equal to 1 on `[lo_in, hi_in]`,
/// supported on `[lo_out, hi_out]`, built from the standard `exp(-1/s)`
/// profile.
#[derive(Debug, Clone, Copy)]
pub struct Bump1D {
    pub lo_out: f64,
    pub lo_in: f64,
    pub hi_in: f64,
    pub hi_out: f64,
}

impl Bump1D {
    pub fn new(lo_out: f64, lo_in: f64, hi_in: f64, hi_out: f64) -> Result<Self> {
        if !(lo_out < lo_in && lo_in < hi_in && hi_in < hi_out) {
            return Err(Error::Argument(
                "bump requires lo_out < lo_in < hi_in < hi_out".into(),
            ));
        }
        Ok(Bump1D {
            lo_out,
            lo_in,
            hi_in,
            hi_out,
        })
    }

    /// Plateau on the inner box of a (inner, outer) pair of intervals.
    pub fn plateau(inner: (f64, f64), outer: (f64, f64)) -> Result<Self> {
        Bump1D::new(outer.0, inner.0, inner.1, outer.1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.lo_out || x >= self.hi_out {
            0.0
        } else if x < self.lo_in {
            smooth_step((x - self.lo_out) / (self.lo_in - self.lo_out))
        } else if x > self.hi_in {
            smooth_step((self.hi_out - x) / (self.hi_out - self.hi_in))
        } else {
            1.0
        }
    }
}

/// Plateau bump with the polynomial step profile of [`poly_step`]: 1 on
/// `[lo_in, hi_in]`, 0 outside `(lo_out, hi_out)`.
#[derive(Debug, Clone, Copy)]
pub struct PolyBump1D {
    pub lo_out: f64,
    pub lo_in: f64,
    pub hi_in: f64,
    pub hi_out: f64,
}

impl PolyBump1D {
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.lo_out || x >= self.hi_out {
            0.0
        } else if x < self.lo_in {
            poly_step((x - self.lo_out) / (self.lo_in - self.lo_out))
        } else if x > self.hi_in {
            poly_step((self.hi_out - x) / (self.hi_out - self.hi_in))
        } else {
            1.0
        }
    }
}

/// Product bump in several variables.
#[derive(Debug, Clone)]
pub struct ProductBump {
    pub axes: Vec<Bump1D>,
}

impl ProductBump {
    /// Equal to 1 on `inner`, supported on `outer` (per-axis plateaus).
    pub fn boxes(inner: &crate::grid::AxisBox, outer: &crate::grid::AxisBox) -> Result<Self> {
        let mut axes = Vec::with_capacity(inner.dim());
        for i in 0..inner.dim() {
            axes.push(Bump1D::plateau(
                (inner.lo[i], inner.hi[i]),
                (outer.lo[i], outer.hi[i]),
            )?);
        }
        Ok(ProductBump { axes })
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        self.axes.iter().zip(p).map(|(b, x)| b.eval(*x)).product()
    }
}

/// The cutoff `a_{lambda,R}`: 1 on `[-L, L]^{n-1} x [R/C_n, C_n lambda]`,
/// supported on `[-2L, 2L]^{n-1} x [R/(2C_n), 2 C_n lambda]`, where
/// `L = lambda_{K,R}`.
#[derive(Debug, Clone)]
pub struct CutoffAlr {
    bump: ProductBump,
    pub inner: crate::grid::AxisBox,
    pub outer: crate::grid::AxisBox,
}

impl CutoffAlr {
    pub fn new(pf: &PhaseField, k: u32, r: f64, spatial_dim: usize) -> Result<Self> {
        let ladder = scale_ladder(k, r, pf.lambda(), pf.c_n())?;
        let l = ladder.value;
        let mut inner_lo = vec![-l; spatial_dim];
        let mut inner_hi = vec![l; spatial_dim];
        inner_lo.push(r / pf.c_n());
        inner_hi.push(pf.c_n() * pf.lambda());
        let mut outer_lo = vec![-2.0 * l; spatial_dim];
        let mut outer_hi = vec![2.0 * l; spatial_dim];
        outer_lo.push(r / (2.0 * pf.c_n()));
        outer_hi.push(2.0 * pf.c_n() * pf.lambda());
        let inner = crate::grid::AxisBox::new(inner_lo, inner_hi)?;
        let outer = crate::grid::AxisBox::new(outer_lo, outer_hi)?;
        let bump = ProductBump::boxes(&inner, &outer)?;
        Ok(CutoffAlr { bump, inner, outer })
    }

    pub fn eval(&self, p: &SpaceTimePoint) -> f64 {
        self.bump.eval(&p.as_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn fd_grad_x(pf: &PhaseField, p: &SpaceTimePoint, w: &[f64], h: f64) -> Vec<f64> {
        (0..p.x.len())
            .map(|i| {
                let mut xp = p.clone();
                let mut xm = p.clone();
                xp.x[i] += h;
                xm.x[i] -= h;
                (pf.phase(&xp, w).unwrap() - pf.phase(&xm, w).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn fd_grad_omega(pf: &PhaseField, p: &SpaceTimePoint, w: &[f64], h: f64) -> Vec<f64> {
        (0..w.len())
            .map(|j| {
                let mut wp = w.to_vec();
                let mut wm = w.to_vec();
                wp[j] += h;
                wm[j] -= h;
                (pf.phase(p, &wp).unwrap() - pf.phase(p, &wm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn phase_trivial_values() {
        // lambda = 1, (x,t) = (0,1), w = 0 -> 1
        let pf = PhaseField::new(1.0, 1.0).unwrap();
        let p = SpaceTimePoint::new(vec![0.0], 1.0);
        assert_relative_eq!(pf.phase(&p, &[0.0]).unwrap(), 1.0);

        // x = t w with lambda = 2, t = 1, w = (1,0) in n = 3 -> lambda^2/t = 4
        let pf = PhaseField::new(2.0, 1.0).unwrap();
        let p = SpaceTimePoint::new(vec![1.0, 0.0], 1.0);
        assert_relative_eq!(pf.phase(&p, &[1.0, 0.0]).unwrap(), 4.0);

        // lambda = 10, (x,t) = ((3,4),5), w = 0 -> 20 sqrt(1.25)
        let pf = PhaseField::new(10.0, 1.0).unwrap();
        let p = SpaceTimePoint::new(vec![3.0, 4.0], 5.0);
        assert_relative_eq!(
            pf.phase(&p, &[0.0, 0.0]).unwrap(),
            20.0 * 1.25f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn t_zero_is_a_domain_error() {
        let pf = PhaseField::new(4.0, 4.0).unwrap();
        let p = SpaceTimePoint::new(vec![1.0], 0.0);
        assert!(pf.phase(&p, &[0.5]).is_err());
        assert!(pf.phase_grad_x(&p, &[0.5]).is_err());
        assert!(pf.phase_dt(&p, &[0.5]).is_err());
    }

    #[test]
    fn beam_point_derivatives() {
        // x = t w: grad_x vanishes, d_t = -lambda^2/t^2
        let pf = PhaseField::new(8.0, 2.0).unwrap();
        let w = [0.25, -0.5];
        let t = 3.0;
        let p = SpaceTimePoint::new(w.iter().map(|v| v * t).collect(), t);
        let g = pf.phase_grad_x(&p, &w).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));
        assert_relative_eq!(pf.phase_dt(&p, &w).unwrap(), -64.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_matches_finite_differences() {
        for (case, n) in [(0u64, 2usize), (1, 3)] {
            let mut r = rng::stream(11, "phase-fd", case);
            for i in 0..200 {
                let lambda = rng::uniform(&mut r, 2.0, 64.0);
                let pf = PhaseField::new(lambda, 4.0).unwrap();
                let t = rng::uniform(&mut r, lambda / 4.0, 4.0 * lambda);
                let x = rng::point_in_box(
                    &mut r,
                    &vec![-lambda; n - 1],
                    &vec![lambda; n - 1],
                );
                let w = rng::point_in_box(&mut r, &vec![-1.0; n - 1], &vec![1.0; n - 1]);
                let p = SpaceTimePoint::new(x, t);
                let h = 1e-5 * lambda;
                let gx = pf.phase_grad_x(&p, &w).unwrap();
                let fx = fd_grad_x(&pf, &p, &w, h);
                for (a, b) in gx.iter().zip(&fx) {
                    assert_relative_eq!(a, b, max_relative = 1e-6, epsilon = 1e-9);
                }
                let gw = pf.phase_grad_omega(&p, &w).unwrap();
                let fw = fd_grad_omega(&pf, &p, &w, 1e-6);
                for (a, b) in gw.iter().zip(&fw) {
                    assert_relative_eq!(a, b, max_relative = 1e-6, epsilon = 1e-9);
                }
                // d_t by finite differences
                let hp = SpaceTimePoint::new(p.x.clone(), t + h);
                let hm = SpaceTimePoint::new(p.x.clone(), t - h);
                let fd_t =
                    (pf.phase(&hp, &w).unwrap() - pf.phase(&hm, &w).unwrap()) / (2.0 * h);
                assert_relative_eq!(
                    pf.phase_dt(&p, &w).unwrap(),
                    fd_t,
                    max_relative = 1e-6,
                    epsilon = 1e-9
                );
                // mixed Hessian vs finite differences of grad_omega in x
                let m = pf.phase_mixed_hessian(&p, &w).unwrap();
                for i in 0..n - 1 {
                    let mut xp = p.clone();
                    let mut xm = p.clone();
                    xp.x[i] += h;
                    xm.x[i] -= h;
                    let gp = pf.phase_grad_omega(&xp, &w).unwrap();
                    let gm = pf.phase_grad_omega(&xm, &w).unwrap();
                    for j in 0..n - 1 {
                        let fd = (gp[j] - gm[j]) / (2.0 * h);
                        assert_relative_eq!(m[i][j], fd, max_relative = 2e-5, epsilon = 1e-10);
                    }
                }
                // d_t d_omega row
                let row = pf.phase_dt_grad_omega(&p, &w).unwrap();
                let gp = pf.phase_grad_omega(&hp, &w).unwrap();
                let gm = pf.phase_grad_omega(&hm, &w).unwrap();
                for j in 0..n - 1 {
                    let fd = (gp[j] - gm[j]) / (2.0 * h);
                    assert_relative_eq!(row[j], fd, max_relative = 2e-5, epsilon = 1e-10);
                }
                let _ = i;
            }
        }
    }

    #[test]
    fn hessian_determinant_closed_form() {
        // x = t w -> exactly 1
        let pf = PhaseField::new(16.0, 4.0).unwrap();
        let w = [0.3, 0.7];
        let p = SpaceTimePoint::new(w.iter().map(|v| 5.0 * v).collect(), 5.0);
        assert_relative_eq!(pf.mixed_hessian_det(&p, &w).unwrap(), 1.0, epsilon = 1e-14);

        // lambda = 1, n = 3, x - t w = (1, 0): the 2x2 Hessian has
        // eigenvalues -s^{-3/2} and -s^{-1/2} with s = 2, so |det| = 1/4.
        let pf = PhaseField::new(1.0, 1.0).unwrap();
        let p = SpaceTimePoint::new(vec![1.0, 0.0], 1.0);
        let w = [0.0, 0.0];
        let m = pf.phase_mixed_hessian(&p, &w).unwrap();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        assert_relative_eq!(det.abs(), 0.25, epsilon = 1e-14);
        assert_relative_eq!(pf.mixed_hessian_det(&p, &w).unwrap(), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn hessian_determinant_matches_numeric_det() {
        let mut r = rng::stream(3, "hess-det", 0);
        for _ in 0..300 {
            let lambda = rng::uniform(&mut r, 1.0, 128.0);
            let pf = PhaseField::new(lambda, 4.0).unwrap();
            let n = if rng::uniform(&mut r, 0.0, 1.0) < 0.5 { 2 } else { 3 };
            let t = rng::uniform(&mut r, lambda / 4.0, 4.0 * lambda);
            let x = rng::point_in_box(&mut r, &vec![-2.0 * lambda; n - 1], &vec![2.0 * lambda; n - 1]);
            let w = rng::point_in_box(&mut r, &vec![-1.0; n - 1], &vec![1.0; n - 1]);
            let p = SpaceTimePoint::new(x, t);
            let m = pf.phase_mixed_hessian(&p, &w).unwrap();
            let det = match n - 1 {
                1 => m[0][0],
                2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
                _ => unreachable!(),
            };
            assert_relative_eq!(
                det.abs(),
                pf.mixed_hessian_det(&p, &w).unwrap(),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn pseudo_conformal_examples_and_roundtrip() {
        let (u, t) = pseudo_forward(&[3.0], 2.0).unwrap();
        assert_eq!(u, vec![1.5]);
        assert_eq!(t, 0.5);
        let (u, t) = pseudo_forward(&[0.0], 1.0).unwrap();
        assert_eq!(u, vec![0.0]);
        assert_eq!(t, 1.0);
        assert!(pseudo_forward(&[1.0], 0.0).is_err());
        assert!(pseudo_inverse(&[1.0], 0.0).is_err());

        let mut r = rng::stream(5, "pseudo", 0);
        let mut max_err: f64 = 0.0;
        for _ in 0..10_000 {
            let d = if rng::uniform(&mut r, 0.0, 1.0) < 0.5 { 1 } else { 2 };
            let x: Vec<f64> = (0..d).map(|_| rng::uniform(&mut r, -10.0, 10.0)).collect();
            let mut xn = rng::uniform(&mut r, -10.0, 10.0);
            if xn.abs() < 1e-3 {
                xn = 1e-3_f64.copysign(xn + 1e-30);
            }
            let (u, t) = pseudo_forward(&x, xn).unwrap();
            let (xb, xnb) = pseudo_inverse(&u, t).unwrap();
            for (a, b) in x.iter().zip(&xb) {
                max_err = max_err.max((a - b).abs());
            }
            max_err = max_err.max((xn - xnb).abs());
        }
        assert!(max_err <= 1e-12, "round trip error {max_err}");
    }

    #[test]
    fn ladder_examples_and_range() {
        // lambda/R < K -> C_n lambda
        let l = scale_ladder(4, 100.0, 200.0, 3.0).unwrap();
        assert_relative_eq!(l.value, 600.0);

        // K = 2, lambda = 4R, C_n = 1 -> 2.5 lambda
        let l = scale_ladder(2, 25.0, 100.0, 1.0).unwrap();
        assert_relative_eq!(l.value, 250.0, epsilon = 1e-9);

        assert!(scale_ladder(2, 300.0, 200.0, 1.0).is_err());
        assert!(scale_ladder(1, 10.0, 200.0, 1.0).is_err());

        let mut r = rng::stream(5, "ladder", 1);
        for _ in 0..2000 {
            let lambda = rng::uniform(&mut r, 1.0, 1e6);
            let rr = rng::uniform(&mut r, 1.0, lambda);
            let k = 2 + (rng::uniform(&mut r, 0.0, 30.0) as u32);
            let cn = rng::uniform(&mut r, 1.0, 8.0);
            let l = scale_ladder(k, rr, lambda, cn).unwrap();
            let ratio = l.value / (cn * lambda);
            assert!(
                (1.0 - 1e-12..=3.0 + 1e-12).contains(&ratio),
                "ladder out of range: {ratio}"
            );
        }
    }

    #[test]
    fn taylor_remainder_difference_is_small() {
        // |e2(x; w) - e2(x; 0)| <= C K^4 / lambda over B_{K^2} balls
        let mut r = rng::stream(9, "taylor", 0);
        let lambda = 4096.0;
        let pf = PhaseField::new(lambda, 4.0).unwrap();
        let k = 4.0f64;
        let mut worst: f64 = 0.0;
        for _ in 0..40 {
            let t0 = rng::uniform(&mut r, lambda / 4.0, 4.0 * lambda);
            let x0v = rng::point_in_box(&mut r, &[-lambda], &[lambda]);
            let x0 = SpaceTimePoint::new(x0v, t0);
            for _ in 0..40 {
                let p = SpaceTimePoint::new(
                    vec![x0.x[0] + rng::uniform(&mut r, -k * k, k * k)],
                    x0.t + rng::uniform(&mut r, -k * k, k * k),
                );
                let w = [rng::uniform(&mut r, 0.0, 1.0)];
                let e_w = pf.taylor_remainder(&x0, &p, &w).unwrap();
                let e_0 = pf.taylor_remainder(&x0, &p, &[0.0]).unwrap();
                worst = worst.max((e_w - e_0).abs());
            }
        }
        let bound = 32.0 * k.powi(4) / lambda;
        assert!(
            worst <= bound,
            "remainder difference {worst} exceeds C K^4/lambda = {bound}"
        );
    }

    #[test]
    fn second_derivative_scaling_bounds() {
        // |d^beta_x d^beta'_w phi| * lambda^{|beta|-1} stays bounded for
        // |beta| <= 3, |beta'| <= 2, via finite differences in x of the
        // closed-form omega-derivatives.
        let mut r = rng::stream(21, "deriv-scale", 0);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let lambda = rng::uniform(&mut r, 16.0, 512.0);
            let pf = PhaseField::new(lambda, 4.0).unwrap();
            let n = 3;
            let t = rng::uniform(&mut r, lambda / 4.0, 4.0 * lambda);
            let x = rng::point_in_box(&mut r, &vec![-lambda; n - 1], &vec![lambda; n - 1]);
            let w = rng::point_in_box(&mut r, &vec![0.0; n - 1], &vec![1.0; n - 1]);
            let p = SpaceTimePoint::new(x, t);
            let h = 1e-3 * lambda;

            let go = |q: &SpaceTimePoint, wv: &[f64]| pf.phase_grad_omega(q, wv).unwrap();
            // |beta|=1, |beta'|=1: closed-form mixed Hessian and t-row
            let m = pf.phase_mixed_hessian(&p, &w).unwrap();
            for row in &m {
                for v in row {
                    worst = worst.max(v.abs());
                }
            }
            for v in pf.phase_dt_grad_omega(&p, &w).unwrap() {
                worst = worst.max(v.abs());
            }
            // |beta|=2, |beta'|=1 by second differences of grad_omega
            for i in 0..n {
                let mut pp = p.clone();
                let mut pm = p.clone();
                if i < n - 1 {
                    pp.x[i] += h;
                    pm.x[i] -= h;
                } else {
                    pp.t += h;
                    pm.t -= h;
                }
                let g0 = go(&p, &w);
                let gp = go(&pp, &w);
                let gm = go(&pm, &w);
                for j in 0..n - 1 {
                    let second = (gp[j] - 2.0 * g0[j] + gm[j]) / (h * h);
                    worst = worst.max((second * lambda).abs());
                }
            }
            // |beta|=1, |beta'|=2: finite differences in w of the mixed Hessian
            let hw = 1e-4;
            for j in 0..n - 1 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += hw;
                wm[j] -= hw;
                let mp = pf.phase_mixed_hessian(&p, &wp).unwrap();
                let mm = pf.phase_mixed_hessian(&p, &wm).unwrap();
                for a in 0..n - 1 {
                    for b in 0..n - 1 {
                        let d3 = (mp[a][b] - mm[a][b]) / (2.0 * hw);
                        worst = worst.max(d3.abs());
                    }
                }
            }
        }
        assert!(worst <= 64.0, "scaled derivative bound violated: {worst}");
    }

    #[test]
    fn bumps_have_exact_support() {
        let b = Bump1D::new(-2.0, -1.0, 1.0, 2.0).unwrap();
        assert_eq!(b.eval(-2.5), 0.0);
        assert_eq!(b.eval(2.0), 0.0);
        assert_eq!(b.eval(0.0), 1.0);
        assert_eq!(b.eval(-1.0), 1.0);
        let v = b.eval(1.5);
        assert!(v > 0.0 && v < 1.0);

        let pf = PhaseField::new(64.0, 4.0).unwrap();
        let cut = CutoffAlr::new(&pf, 4, 16.0, 1).unwrap();
        let inside = SpaceTimePoint::new(vec![0.0], 64.0);
        assert_eq!(cut.eval(&inside), 1.0);
        let outside = SpaceTimePoint::new(vec![0.0], 1.0);
        assert_eq!(cut.eval(&outside), 0.0);
    }
}
