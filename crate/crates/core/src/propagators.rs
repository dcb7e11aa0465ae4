//! Proper-time propagators: free, short-s, semiclassical (Van Vleck),
//! constant-field and delta-potential forms, plus the classical-path
//! boundary-value solver that feeds them.

use std::f64::consts::PI;

use nalgebra::{Complex, Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::classical::{FieldProvider, PotentialProvider};
use crate::error::{domain, EcdError, Result};
use crate::minkowski::{AntisymTensor, FourVector, METRIC};

pub type ComplexAmplitude = Complex64;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn nonzero_s(s: f64) -> Result<()> {
    if s == 0.0 || !s.is_finite() {
        return Err(EcdError::Singular(format!("propagator interval s = {s}")));
    }
    Ok(())
}

fn positive_hbar(hbar: f64) -> Result<()> {
    if !(hbar > 0.0) {
        return Err(domain(format!("hbar must be positive, got {hbar}")));
    }
    Ok(())
}

/// i sign(s) / (2πħ̄)².
fn prefactor(s: f64, hbar: f64) -> Complex64 {
    I * s.signum() / (2.0 * PI * hbar).powi(2)
}

/// G_f = (i/4π²) e^{i(x−x′)²/2s} sign(s) / s² (ħ̄ = 1).
pub fn free_propagator(x: FourVector, xp: FourVector, s: f64) -> Result<ComplexAmplitude> {
    free_propagator_hbar(x, xp, s, 1.0)
}

/// Free propagator of iħ̄∂_s = −½ħ̄²□.
pub fn free_propagator_hbar(x: FourVector, xp: FourVector, s: f64, hbar: f64) -> Result<ComplexAmplitude> {
    nonzero_s(s)?;
    positive_hbar(hbar)?;
    let d = x - xp;
    Ok(prefactor(s, hbar) * (I * (d.square() / (2.0 * s * hbar))).exp() / (s * s))
}

/// (i sign s/(2πħ̄)²) exp(i[(x−x′)²/2s + qA(x)·(x−x′)]/ħ̄) / s².
pub fn short_s_propagator(
    x: FourVector,
    xp: FourVector,
    s: f64,
    potential: &dyn PotentialProvider,
    q: f64,
    hbar: f64,
) -> Result<ComplexAmplitude> {
    nonzero_s(s)?;
    positive_hbar(hbar)?;
    let d = x - xp;
    let phase = (d.square() / (2.0 * s) + q * potential.potential(x).dot(&d)) / hbar;
    Ok(prefactor(s, hbar) * (I * phase).exp() / (s * s))
}

/// G′ = G exp(iq[α(x) − α(x′)]/ħ̄).
pub fn gauge_transform_propagator(g: ComplexAmplitude, alpha_x: f64, alpha_xp: f64, q: f64, hbar: f64) -> ComplexAmplitude {
    g * (I * (q * (alpha_x - alpha_xp) / hbar)).exp()
}

/// Delta-potential propagator: G_f plus the bounce term
/// sign(s) ħ̄ exp(i[(x⁰−x′⁰)² − (|x|+|x′|)²]/2ħ̄s) / ((2πħ̄)²|x||x′|s).
/// At ħ̄ = 1 this is the textbook form; the explicit ħ̄ keeps the
/// boundary condition ∂_r(Gr)|₀ = 0 for any ħ̄.
pub fn delta_potential_propagator(x: FourVector, xp: FourVector, s: f64, hbar: f64) -> Result<ComplexAmplitude> {
    let (r, rp) = (x.spatial_norm(), xp.spatial_norm());
    if r == 0.0 || rp == 0.0 {
        return Err(EcdError::Singular("delta-potential propagator evaluated at the spatial origin".into()));
    }
    let free = free_propagator_hbar(x, xp, s, hbar)?;
    Ok(free + delta_bounce_term(x, xp, s, hbar))
}

fn delta_bounce_term(x: FourVector, xp: FourVector, s: f64, hbar: f64) -> Complex64 {
    let (r, rp) = (x.spatial_norm(), xp.spatial_norm());
    let phase = bounce_action(x, xp, s) / hbar;
    (I * phase).exp() * (s.signum() * hbar / ((2.0 * PI * hbar).powi(2) * r * rp * s))
}

/// Action of the free path x′ → spatial origin → x over interval s.
pub fn bounce_action(x: FourVector, xp: FourVector, s: f64) -> f64 {
    let (r, rp) = (x.spatial_norm(), xp.spatial_norm());
    let dt = x.0[0] - xp.0[0];
    (dt * dt - (r + rp) * (r + rp)) / (2.0 * s)
}

/// Radial boundary slope d(G r)/dr at radius `r` along direction `dir`,
/// by a centred difference with step `h`.
pub fn delta_boundary_slope(
    t: f64,
    dir: [f64; 3],
    r: f64,
    h: f64,
    xp: FourVector,
    s: f64,
    hbar: f64,
) -> Result<ComplexAmplitude> {
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if n == 0.0 || !(h > 0.0) || !(r > h) {
        return Err(domain("need a nonzero direction and r > h > 0"));
    }
    let at = |rr: f64| -> Result<Complex64> {
        let x = FourVector::new(t, rr * dir[0] / n, rr * dir[1] / n, rr * dir[2] / n);
        Ok(delta_potential_propagator(x, xp, s, hbar)? * rr)
    };
    Ok((at(r + h)? - at(r - h)?) / (2.0 * h))
}

/// Residual of iħ̄∂_sψ + ½D^μD_μψ = 0, D = ħ̄∂ − iqA, by central
/// differences with step `h` in s and in every coordinate, divided by |ψ|.
pub fn schrodinger_residual<F>(
    psi: F,
    potential: &dyn PotentialProvider,
    q: f64,
    hbar: f64,
    x: FourVector,
    s: f64,
    h: f64,
) -> Result<f64>
where
    F: Fn(FourVector, f64) -> Result<Complex64>,
{
    let centre = psi(x, s)?;
    let ds = (psi(x, s + h)? - psi(x, s - h)?) / (2.0 * h);
    let mut dd = Complex64::new(0.0, 0.0);
    for mu in 0..4 {
        let mut e = FourVector::ZERO;
        e.0[mu] = h;
        let (fp, fm) = (psi(x + e, s)?, psi(x - e, s)?);
        let a = |y: FourVector| potential.potential(y).lower().0[mu];
        let (ap, am, a0) = (a(x + e), a(x - e), a(x));
        // (ħ̄∂_μ − iqA_μ)² with A_μ lowered, then contracted with g^{μμ}
        let lap = (fp - centre * 2.0 + fm) / (h * h);
        let grad = (fp - fm) / (2.0 * h);
        let div_a = (ap - am) / (2.0 * h);
        let term = lap * (hbar * hbar) - I * q * hbar * (centre * div_a + grad * (2.0 * a0)) - centre * (q * q * a0 * a0);
        dd += term * METRIC[mu];
    }
    let r = I * hbar * ds + dd * 0.5;
    let scale = centre.norm();
    Ok(if scale > 0.0 { r.norm() / scale } else { r.norm() })
}

/// Classical action I(x, x′; s) of L = ½ẋ² + qA·ẋ with derivatives.
pub trait ActionProvider: Sync {
    fn action(&self, x: FourVector, xp: FourVector, s: f64) -> Result<f64>;

    /// p_μ = ∂I/∂x^μ by Richardson-extrapolated central differences.
    fn gradient_x(&self, x: FourVector, xp: FourVector, s: f64) -> Result<FourVector> {
        let mut out = FourVector::ZERO;
        let h = fd_step(x);
        for mu in 0..4 {
            let d = |h: f64| -> Result<f64> {
                let mut e = FourVector::ZERO;
                e.0[mu] = h;
                Ok((self.action(x + e, xp, s)? - self.action(x - e, xp, s)?) / (2.0 * h))
            };
            out.0[mu] = (4.0 * d(h / 2.0)? - d(h)?) / 3.0;
        }
        Ok(out)
    }

    /// ∂I/∂s by Richardson-extrapolated central differences.
    fn derivative_s(&self, x: FourVector, xp: FourVector, s: f64) -> Result<f64> {
        let h = 1e-3 * s.abs().max(1e-3);
        let d = |h: f64| -> Result<f64> { Ok((self.action(x, xp, s + h)? - self.action(x, xp, s - h)?) / (2.0 * h)) };
        Ok((4.0 * d(h / 2.0)? - d(h)?) / 3.0)
    }

    /// ∂²I/∂x^μ∂x′^ν by Richardson-extrapolated cross differences.
    fn mixed_hessian(&self, x: FourVector, xp: FourVector, s: f64) -> Result<[[f64; 4]; 4]> {
        let h = fd_step(x).max(fd_step(xp)) * 4.0;
        let mut m = [[0.0; 4]; 4];
        for mu in 0..4 {
            for nu in 0..4 {
                let d = |h: f64| -> Result<f64> {
                    let mut e = FourVector::ZERO;
                    e.0[mu] = h;
                    let mut f = FourVector::ZERO;
                    f.0[nu] = h;
                    let pp = self.action(x + e, xp + f, s)?;
                    let pm = self.action(x + e, xp - f, s)?;
                    let mp = self.action(x - e, xp + f, s)?;
                    let mm = self.action(x - e, xp - f, s)?;
                    Ok((pp - pm - mp + mm) / (4.0 * h * h))
                };
                m[mu][nu] = (4.0 * d(h / 2.0)? - d(h)?) / 3.0;
            }
        }
        Ok(m)
    }
}

fn fd_step(x: FourVector) -> f64 {
    1e-3 * (1.0 + x.max_abs())
}

/// I = (x − x′)²/2s.
#[derive(Debug, Clone, Copy, Default)]
pub struct FreeAction;

impl ActionProvider for FreeAction {
    fn action(&self, x: FourVector, xp: FourVector, s: f64) -> Result<f64> {
        nonzero_s(s)?;
        Ok((x - xp).square() / (2.0 * s))
    }

    fn gradient_x(&self, x: FourVector, xp: FourVector, s: f64) -> Result<FourVector> {
        nonzero_s(s)?;
        Ok((x - xp).lower() * (1.0 / s))
    }

    fn mixed_hessian(&self, _: FourVector, _: FourVector, s: f64) -> Result<[[f64; 4]; 4]> {
        nonzero_s(s)?;
        let mut m = [[0.0; 4]; 4];
        for (mu, row) in m.iter_mut().enumerate() {
            row[mu] = -METRIC[mu] / s;
        }
        Ok(m)
    }
}

/// 𝓕 = |det(−∂_x∂_{x′}I)|^{1/2}.
pub fn van_vleck(action: &dyn ActionProvider, x: FourVector, xp: FourVector, s: f64) -> Result<f64> {
    let m = action.mixed_hessian(x, xp, s)?;
    let det = Matrix4::from_fn(|i, j| -m[i][j]).determinant();
    if !det.is_finite() {
        return Err(EcdError::NoPath("mixed Hessian is not finite".into()));
    }
    Ok(det.abs().sqrt())
}

/// Scalar g(y) = y²/(2 − 2cosh y) for complex y, with a series below 1e−3.
pub fn g_scalar(y: Complex<f64>) -> Result<Complex<f64>> {
    if y.norm() < 1e-3 {
        let y2 = y * y;
        return Ok(-(Complex::new(1.0, 0.0) + y2 / 12.0 + y2 * y2 / 360.0).inv());
    }
    if y.re.abs() > 700.0 {
        return Err(EcdError::Range(format!("cosh overflow for |Re y| = {}", y.re.abs())));
    }
    let den = Complex::new(2.0, 0.0) - y.cosh() * 2.0;
    if den.norm() < 1e-300 {
        return Err(EcdError::Range("g(y) has a pole (caustic at y = 2πin)".into()));
    }
    Ok(y * y / den)
}

/// Eigenvalues of the mixed tensor qsF^μ_ν.
fn field_eigenvalues(f: &AntisymTensor, s: f64, q: f64) -> Vec<Complex<f64>> {
    let m = f.mixed();
    Matrix4::from_fn(|i, j| q * s * m[i][j]).complex_eigenvalues().iter().copied().collect()
}

/// |det g(qFs)| through the eigenvalues of qFs.
pub fn det_g(f: &AntisymTensor, s: f64, q: f64) -> Result<f64> {
    let mut prod = Complex::new(1.0, 0.0);
    for y in field_eigenvalues(f, s, q) {
        prod *= g_scalar(y)?;
    }
    Ok(prod.norm())
}

/// Constant-field Van Vleck determinant s⁻²|det g(qFs)|^{1/4}.
///
/// Eigenvalues of qFs come in pairs ±y and each pair contributes
/// |g(y)|^{1/2}; this matches finite differences of the exact action
/// (the exponent ½ on the full 4×4 determinant would double count).
pub fn constant_field_van_vleck(f: &AntisymTensor, s: f64, q: f64) -> Result<f64> {
    nonzero_s(s)?;
    Ok(s.powi(-2) * det_g(f, s, q)?.powf(0.25))
}

/// The determinant with exponent ½ on |det g|, kept for comparison.
pub fn constant_field_van_vleck_half_power(f: &AntisymTensor, s: f64, q: f64) -> Result<f64> {
    nonzero_s(s)?;
    Ok(s.powi(-2) * det_g(f, s, q)?.sqrt())
}

fn matrix(m: [[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[i][j])
}

fn vec4(v: FourVector) -> Vector4<f64> {
    Vector4::from_column_slice(&v.0)
}

fn from_vec4(v: Vector4<f64>) -> FourVector {
    FourVector([v[0], v[1], v[2], v[3]])
}

/// K(σ) = Σ_k M^k σ^{k+1}/(k+1)!, the map from initial velocity to
/// displacement under ẍ = Mẋ.
fn phi1(m: &Matrix4<f64>, sigma: f64) -> Result<(Matrix4<f64>, Matrix4<f64>)> {
    if (m * sigma).norm() > 30.0 {
        return Err(EcdError::Range("|qFs| too large for the series propagator map".into()));
    }
    let mut term = Matrix4::identity() * sigma;
    let mut k_acc = term;
    let mut e_acc = Matrix4::identity();
    let mut pow = Matrix4::identity();
    for k in 1..200 {
        pow = pow * m * (sigma / k as f64);
        e_acc += pow;
        term = term * m * (sigma / (k as f64 + 1.0));
        k_acc += term;
        if term.norm() < 1e-18 * k_acc.norm() && pow.norm() < 1e-18 * e_acc.norm() {
            break;
        }
    }
    Ok((k_acc, e_acc))
}

/// Exact action for a homogeneous field in the symmetric gauge.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFieldAction {
    pub f: AntisymTensor,
    pub q: f64,
}

impl ConstantFieldAction {
    fn m(&self) -> Matrix4<f64> {
        matrix(self.f.mixed()) * self.q
    }

    /// Initial velocity of the classical path from x′ to x in interval s.
    pub fn initial_velocity(&self, x: FourVector, xp: FourVector, s: f64) -> Result<FourVector> {
        nonzero_s(s)?;
        let (k, _) = phi1(&self.m(), s)?;
        let v = k
            .lu()
            .solve(&vec4(x - xp))
            .ok_or_else(|| EcdError::NoPath("singular propagator map (caustic)".into()))?;
        Ok(from_vec4(v))
    }

    pub fn path_point(&self, xp: FourVector, v0: FourVector, sigma: f64) -> Result<(FourVector, FourVector)> {
        let (k, e) = phi1(&self.m(), sigma)?;
        Ok((xp + from_vec4(k * vec4(v0)), from_vec4(e * vec4(v0))))
    }
}

impl ActionProvider for ConstantFieldAction {
    fn action(&self, x: FourVector, xp: FourVector, s: f64) -> Result<f64> {
        let v0 = self.initial_velocity(x, xp, s)?;
        let field = crate::classical::ConstantField::new(self.f);
        let lag = |sigma: f64| -> Result<f64> {
            let (y, yd) = self.path_point(xp, v0, sigma)?;
            Ok(0.5 * yd.square() + self.q * field.potential(y).dot(&yd))
        };
        gauss_legendre(lag, 0.0, s, 8)
    }

    fn gradient_x(&self, x: FourVector, xp: FourVector, s: f64) -> Result<FourVector> {
        let v0 = self.initial_velocity(x, xp, s)?;
        let (_, vs) = self.path_point(xp, v0, s)?;
        let field = crate::classical::ConstantField::new(self.f);
        Ok((vs + field.potential(x) * self.q).lower())
    }
}

/// Composite 10-point Gauss–Legendre on `panels` equal panels.
fn gauss_legendre<F: Fn(f64) -> Result<f64>>(f: F, a: f64, b: f64, panels: usize) -> Result<f64> {
    const X: [f64; 5] = [
        0.148_874_338_981_631_2,
        0.433_395_394_129_247_2,
        0.679_409_568_299_024_4,
        0.865_063_366_688_984_5,
        0.973_906_528_517_171_7,
    ];
    const W: [f64; 5] = [
        0.295_524_224_714_752_9,
        0.269_266_719_309_996_4,
        0.219_086_362_515_982_0,
        0.149_451_349_150_580_6,
        0.066_671_344_308_688_1,
    ];
    let h = (b - a) / panels as f64;
    let mut acc = crate::numerics::CompensatedSum::new();
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for k in 0..5 {
            let dx = 0.5 * h * X[k];
            acc.add(0.5 * h * W[k] * (f(c - dx)? + f(c + dx)?));
        }
    }
    Ok(acc.value())
}

/// Shooting-solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvpOptions {
    pub steps: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Extra initial velocities tried after the straight-line guess.
    pub guesses: Vec<FourVector>,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self {
            steps: 256,
            tolerance: 1e-12,
            max_iterations: 30,
            guesses: Vec::new(),
        }
    }
}

/// Classical path from x′ (σ = 0) to x (σ = s).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalPath {
    pub sigma: Vec<f64>,
    pub points: Vec<FourVector>,
    pub velocities: Vec<FourVector>,
    pub action: f64,
    /// p_μ = ẋ_μ + qA_μ at the final point (covariant components).
    pub final_momentum: FourVector,
    pub iterations: usize,
    pub endpoint_error: f64,
    /// |det ∂x(s)/∂ẋ(0)|^{−1/2}, equal to |det(−∂_x∂_{x′}I)|^{1/2}.
    pub van_vleck: f64,
}

fn shoot(
    field: &dyn PotentialProvider,
    q: f64,
    xp: FourVector,
    v0: FourVector,
    s: f64,
    steps: usize,
) -> (Vec<FourVector>, Vec<FourVector>) {
    let h = s / steps as f64;
    let mut xs = Vec::with_capacity(steps + 1);
    let mut vs = Vec::with_capacity(steps + 1);
    let (mut x, mut v) = (xp, v0);
    xs.push(x);
    vs.push(v);
    let rhs = |x: FourVector, v: FourVector| crate::classical::lorentz_rhs(x, v, field as &dyn FieldProvider, q);
    for _ in 0..steps {
        let a1 = rhs(x, v);
        let (x2, v2) = (x + v * (0.5 * h), v + a1 * (0.5 * h));
        let a2 = rhs(x2, v2);
        let (x3, v3) = (x + v2 * (0.5 * h), v + a2 * (0.5 * h));
        let a3 = rhs(x3, v3);
        let (x4, v4) = (x + v3 * h, v + a3 * h);
        let a4 = rhs(x4, v4);
        x = x + (v + v2 * 2.0 + v3 * 2.0 + v4) * (h / 6.0);
        v = v + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
        xs.push(x);
        vs.push(v);
    }
    (xs, vs)
}

fn shooting_jacobian(
    field: &dyn PotentialProvider,
    q: f64,
    xp: FourVector,
    v: FourVector,
    s: f64,
    steps: usize,
) -> Matrix4<f64> {
    let mut jac = Matrix4::zeros();
    for k in 0..4 {
        let dv = 1e-6 * (1.0 + v.0[k].abs());
        let mut e = FourVector::ZERO;
        e.0[k] = dv;
        let plus = shoot(field, q, xp, v + e, s, steps).0[steps];
        let minus = shoot(field, q, xp, v - e, s, steps).0[steps];
        let col = (plus - minus) * (0.5 / dv);
        for r in 0..4 {
            jac[(r, k)] = col.0[r];
        }
    }
    jac
}

/// Single shooting with Newton on the initial velocity. Caller guesses are
/// tried first, then the straight-line velocity (x − x′)/s.
pub fn classical_path_bvp(
    field: &dyn PotentialProvider,
    xp: FourVector,
    x: FourVector,
    s: f64,
    q: f64,
    opts: &BvpOptions,
) -> Result<ClassicalPath> {
    nonzero_s(s)?;
    if opts.steps < 2 || opts.steps % 2 != 0 {
        return Err(domain("BVP step count must be even and at least 2"));
    }
    let mut guesses = opts.guesses.clone();
    guesses.push((x - xp) * (1.0 / s));
    let scale = 1.0 + x.max_abs().max(xp.max_abs());
    let mut last_err = f64::INFINITY;
    for guess in guesses {
        let mut v = guess;
        for it in 0..opts.max_iterations {
            let (xs, vs) = shoot(field, q, xp, v, s, opts.steps);
            let miss = xs[opts.steps] - x;
            last_err = miss.max_abs();
            if !last_err.is_finite() {
                break;
            }
            let jac = shooting_jacobian(field, q, xp, v, s, opts.steps);
            if last_err <= opts.tolerance * scale {
                let det = jac.determinant();
                if det == 0.0 || !det.is_finite() {
                    return Err(EcdError::NoPath("caustic: singular shooting Jacobian".into()));
                }
                let mut path = finish_path(field, q, s, opts.steps, xs, vs, it, last_err);
                path.van_vleck = det.abs().powf(-0.5);
                return Ok(path);
            }
            match jac.lu().solve(&vec4(miss)) {
                Some(step) => v = v - from_vec4(step),
                None => break,
            }
        }
    }
    Err(EcdError::NoPath(format!(
        "shooting did not converge from {:?} to {:?} over s = {s}; best endpoint miss {last_err:e}",
        xp.0, x.0
    )))
}

#[allow(clippy::too_many_arguments)]
fn finish_path(
    field: &dyn PotentialProvider,
    q: f64,
    s: f64,
    steps: usize,
    xs: Vec<FourVector>,
    vs: Vec<FourVector>,
    iterations: usize,
    endpoint_error: f64,
) -> ClassicalPath {
    let h = s / steps as f64;
    let lag: Vec<f64> = xs
        .iter()
        .zip(&vs)
        .map(|(x, v)| 0.5 * v.square() + q * field.potential(*x).dot(v))
        .collect();
    let mut acc = crate::numerics::CompensatedSum::new();
    for (i, l) in lag.iter().enumerate() {
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc.add(w * l);
    }
    let last = xs[steps];
    let final_momentum = (vs[steps] + field.potential(last) * q).lower();
    ClassicalPath {
        sigma: (0..=steps).map(|i| i as f64 * h).collect(),
        points: xs,
        velocities: vs,
        action: acc.value() * h / 3.0,
        final_momentum,
        iterations,
        endpoint_error,
        van_vleck: f64::NAN,
    }
}

/// Action provider backed by the shooting solver.
pub struct BvpAction<'a> {
    pub field: &'a dyn PotentialProvider,
    pub q: f64,
    pub options: BvpOptions,
}

impl ActionProvider for BvpAction<'_> {
    fn action(&self, x: FourVector, xp: FourVector, s: f64) -> Result<f64> {
        Ok(classical_path_bvp(self.field, xp, x, s, self.q, &self.options)?.action)
    }
}

/// ∂_sI + ½(∂I − qA)², with derivatives of the action by finite differences.
pub fn hamilton_jacobi_residual(
    action: &dyn ActionProvider,
    potential: &dyn PotentialProvider,
    q: f64,
    x: FourVector,
    xp: FourVector,
    s: f64,
) -> Result<f64> {
    let ds = action.derivative_s(x, xp, s)?;
    let grad = action.gradient_x(x, xp, s)?;
    let kinetic = grad - potential.potential(x).lower() * q;
    // kinetic is covariant; its Minkowski square uses the inverse metric,
    // which has the same diagonal.
    Ok((ds + 0.5 * kinetic.square()).abs())
}

/// One contribution β to the semiclassical sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathContribution {
    pub action: f64,
    pub van_vleck: f64,
    /// Extra constant phase (e.g. from a reflection); zero for direct paths.
    pub phase: f64,
}

/// (i sign s/(2πħ̄)²) Σ_β 𝓕_β e^{i(I_β/ħ̄ + phase_β)}.
pub fn semiclassical_propagator(paths: &[PathContribution], s: f64, hbar: f64) -> Result<ComplexAmplitude> {
    nonzero_s(s)?;
    positive_hbar(hbar)?;
    if paths.is_empty() {
        return Err(domain("semiclassical propagator needs at least one path"));
    }
    let mut sum = Complex64::new(0.0, 0.0);
    for p in paths {
        sum += (I * (p.action / hbar + p.phase)).exp() * p.van_vleck;
    }
    Ok(prefactor(s, hbar) * sum)
}

/// Propagator kinds dispatched by [`PropagatorSpec::evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PropagatorKind {
    Free,
    /// Short-s form in a homogeneous field (symmetric gauge).
    ShortS { f: AntisymTensor, q: f64 },
    /// Exact semiclassical propagator in a homogeneous field.
    ConstantField { f: AntisymTensor, q: f64 },
    DeltaPotential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatorSpec {
    pub kind: PropagatorKind,
    pub hbar: f64,
}

impl PropagatorSpec {
    pub fn free() -> Self {
        Self {
            kind: PropagatorKind::Free,
            hbar: 1.0,
        }
    }

    pub fn evaluate(&self, x: FourVector, xp: FourVector, s: f64) -> Result<ComplexAmplitude> {
        match self.kind {
            PropagatorKind::Free => free_propagator_hbar(x, xp, s, self.hbar),
            PropagatorKind::ShortS { f, q } => {
                short_s_propagator(x, xp, s, &crate::classical::ConstantField::new(f), q, self.hbar)
            }
            PropagatorKind::ConstantField { f, q } => {
                let act = ConstantFieldAction { f, q };
                let path = PathContribution {
                    action: act.action(x, xp, s)?,
                    van_vleck: constant_field_van_vleck(&f, s, q)?,
                    phase: 0.0,
                };
                semiclassical_propagator(&[path], s, self.hbar)
            }
            PropagatorKind::DeltaPotential => delta_potential_propagator(x, xp, s, self.hbar),
        }
    }

    /// λ⁻⁴G(λ⁻¹x, λ⁻¹x′; λ⁻²s): the propagator after a scale transformation.
    pub fn scaled_evaluate(&self, lambda: f64, x: FourVector, xp: FourVector, s: f64) -> Result<ComplexAmplitude> {
        let inner = match self.kind {
            PropagatorKind::ShortS { f, q } => PropagatorSpec {
                kind: PropagatorKind::ShortS { f: f.scale(lambda * lambda), q },
                hbar: self.hbar,
            },
            PropagatorKind::ConstantField { f, q } => PropagatorSpec {
                kind: PropagatorKind::ConstantField { f: f.scale(lambda * lambda), q },
                hbar: self.hbar,
            },
            _ => *self,
        };
        Ok(inner.evaluate(x * (1.0 / lambda), xp * (1.0 / lambda), s / (lambda * lambda))? * lambda.powi(-4))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{ConstantField, NoField};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn x0() -> FourVector {
        FourVector::new(0.3, -0.2, 0.5, 0.1)
    }

    #[test]
    fn free_propagator_at_coincidence() {
        let g = free_propagator(x0(), x0(), 1.0).unwrap();
        assert_eq!(g.re, 0.0);
        assert_abs_diff_eq!(g.im, 0.025_330_295_910_584_444, epsilon = 1e-15);
        assert!(free_propagator(x0(), x0(), 0.0).is_err());
    }

    #[test]
    fn free_propagator_solves_schrodinger() {
        let xp = FourVector::new(0.1, 0.4, -0.3, 0.2);
        let psi = |x: FourVector, s: f64| free_propagator(x, xp, s);
        let r1 = schrodinger_residual(psi, &NoField, 0.0, 1.0, x0(), 0.7, 1e-2).unwrap();
        let r2 = schrodinger_residual(psi, &NoField, 0.0, 1.0, x0(), 0.7, 5e-3).unwrap();
        assert!(r1 < 1e-2 && r2 < r1 / 3.5, "{r1} {r2}");
    }

    #[test]
    fn short_s_reduces_to_free() {
        let xp = FourVector::new(1.0, 0.0, 0.2, 0.0);
        let a = short_s_propagator(x0(), xp, -0.4, &NoField, 1.0, 1.0).unwrap();
        assert_eq!(a, free_propagator(x0(), xp, -0.4).unwrap());
    }

    #[test]
    fn short_s_gauge_shift_is_second_order() {
        // α(x) = ½ x^T S x gives ∂α linear in x: a pure-gauge shift of A.
        struct Grad(f64);
        impl FieldProvider for Grad {
            fn field(&self, _: FourVector) -> AntisymTensor {
                AntisymTensor::ZERO
            }
        }
        impl PotentialProvider for Grad {
            fn potential(&self, x: FourVector) -> FourVector {
                // A^μ = ∂^μ α with α = k (x⁰)² + k (x¹)²: ∂^0 α = 2k x⁰, ∂^1 α = −2k x¹.
                FourVector::new(2.0 * self.0 * x.0[0], -2.0 * self.0 * x.0[1], 0.0, 0.0)
            }
        }
        let alpha = |x: FourVector| 0.8 * (x.0[0] * x.0[0] + x.0[1] * x.0[1]);
        let x = FourVector::new(0.5, 0.7, 0.0, 0.0);
        let mut errs = Vec::new();
        for d in [0.1, 0.05] {
            let xp = x - FourVector::new(d, d, 0.0, 0.0);
            let base = short_s_propagator(x, xp, 0.3, &NoField, 1.0, 1.0).unwrap();
            let shifted = short_s_propagator(x, xp, 0.3, &Grad(0.8), 1.0, 1.0).unwrap();
            let predicted = gauge_transform_propagator(base, alpha(x), alpha(xp), 1.0, 1.0);
            errs.push((shifted / predicted).arg().abs());
            assert_abs_diff_eq!(shifted.norm(), base.norm(), epsilon = 1e-15);
        }
        assert!(errs[1] < errs[0] / 3.5, "{errs:?}");
    }

    #[test]
    fn gauge_transform_properties() {
        let g = Complex64::new(0.3, -1.2);
        assert_eq!(gauge_transform_propagator(g, 2.0, 2.0, 1.3, 1.0), g);
        let t = gauge_transform_propagator(g, 0.4, -1.1, 1.3, 1.0);
        assert_abs_diff_eq!(t.norm(), g.norm(), epsilon = 1e-15);
        let back = gauge_transform_propagator(t, -0.4, 1.1, 1.3, 1.0);
        assert_abs_diff_eq!((back - g).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn free_van_vleck_is_s_to_minus_two() {
        for s in [0.3, -1.7] {
            let v = van_vleck(&FreeAction, x0(), FourVector::ZERO, s).unwrap();
            assert_abs_diff_eq!(v, s.powi(-2), epsilon = 1e-12);
        }
    }

    #[test]
    fn g_scalar_values() {
        let g1 = g_scalar(Complex::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(g1.re, 1.0 / (2.0 - 2.0 * 1f64.cosh()), epsilon = 1e-15);
        assert_abs_diff_eq!(g1.re, -0.920_674, epsilon = 1e-6);
        let small = g_scalar(Complex::new(1e-4, 0.0)).unwrap();
        assert_abs_diff_eq!(small.re, -1.0, epsilon = 1e-8);
        // Series and closed form agree across the switch point.
        let a = g_scalar(Complex::new(0.999e-3, 0.0)).unwrap();
        let b = g_scalar(Complex::new(1.001e-3, 0.0)).unwrap();
        assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn zero_field_van_vleck() {
        assert_abs_diff_eq!(constant_field_van_vleck(&AntisymTensor::ZERO, 0.5, 1.0).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_field_closed_form_matches_finite_differences() {
        let f = AntisymTensor::from_e_b([0.3, 0.0, 0.6], [0.2, -0.5, 0.1]);
        for s in [0.1, 0.7, 2.0] {
            let act = ConstantFieldAction { f, q: 1.0 };
            let fd = van_vleck(&act, x0(), FourVector::new(-0.1, 0.2, 0.0, 0.3), s).unwrap();
            let closed = constant_field_van_vleck(&f, s, 1.0).unwrap();
            assert!((fd - closed).abs() < 1e-4 * closed, "s={s} fd={fd} closed={closed}");
        }
    }

    #[test]
    fn bvp_free_path_is_straight() {
        let xp = FourVector::new(0.0, 0.1, 0.0, 0.0);
        let path = classical_path_bvp(&NoField, xp, x0(), 0.8, 1.0, &BvpOptions::default()).unwrap();
        assert_abs_diff_eq!(path.action, (x0() - xp).square() / 1.6, epsilon = 1e-13);
    }

    #[test]
    fn bvp_matches_constant_field_action() {
        let f = AntisymTensor::from_e_b([0.4, 0.0, 0.2], [0.0, 0.3, 0.0]);
        let field = ConstantField::new(f);
        let xp = FourVector::new(-0.2, 0.1, 0.0, 0.3);
        let path = classical_path_bvp(&field, xp, x0(), 1.3, 1.0, &BvpOptions::default()).unwrap();
        let exact = ConstantFieldAction { f, q: 1.0 }.action(x0(), xp, 1.3).unwrap();
        assert_abs_diff_eq!(path.action, exact, epsilon = 1e-10);
        let grad = ConstantFieldAction { f, q: 1.0 }.gradient_x(x0(), xp, 1.3).unwrap();
        assert!((grad - path.final_momentum).max_abs() < 1e-9);
    }

    #[test]
    fn shooting_jacobian_gives_van_vleck() {
        let f = AntisymTensor::from_e_b([0.3, 0.0, 0.5], [0.0, 0.4, 0.0]);
        let field = ConstantField::new(f);
        let path = classical_path_bvp(&field, FourVector::ZERO, x0(), 0.9, 1.0, &BvpOptions::default()).unwrap();
        let closed = constant_field_van_vleck(&f, 0.9, 1.0).unwrap();
        assert!((path.van_vleck - closed).abs() < 1e-7 * closed);
        let free = classical_path_bvp(&NoField, FourVector::ZERO, x0(), -0.5, 1.0, &BvpOptions::default()).unwrap();
        assert_abs_diff_eq!(free.van_vleck, 4.0, epsilon = 1e-8);
    }

    #[test]
    fn semiclassical_free_is_exact() {
        let xp = FourVector::new(0.5, 0.0, 0.1, -0.2);
        let s = 0.9;
        let path = PathContribution {
            action: FreeAction.action(x0(), xp, s).unwrap(),
            van_vleck: s.powi(-2),
            phase: 0.0,
        };
        let sc = semiclassical_propagator(&[path], s, 1.0).unwrap();
        let exact = free_propagator(x0(), xp, s).unwrap();
        assert!((sc - exact).norm() <= 1e-15 * exact.norm());
        assert!(semiclassical_propagator(&[], s, 1.0).is_err());
    }

    #[test]
    fn delta_potential_limits_and_boundary() {
        let xp = FourVector::new(0.0, 0.6, 0.2, -0.1);
        let s = 0.8;
        let far = FourVector::new(0.5, 1e7, 0.0, 0.0);
        let g = delta_potential_propagator(far, xp, s, 1.0).unwrap();
        let f = free_propagator(far, xp, s).unwrap();
        assert!((g - f).norm() < 1e-8);
        assert!(delta_potential_propagator(FourVector::new(1.0, 0.0, 0.0, 0.0), xp, s, 1.0).is_err());
        let mut prev = f64::INFINITY;
        for k in 0..5 {
            let r = 0.02 / 2f64.powi(k);
            let slope = delta_boundary_slope(0.3, [0.0, 0.6, 0.8], r, r / 4.0, xp, s, 1.0).unwrap().norm();
            assert!(slope < prev);
            prev = slope;
        }
    }

    #[test]
    fn delta_potential_solves_free_equation_away_from_origin() {
        let xp = FourVector::new(0.0, 0.6, 0.2, -0.1);
        let x = FourVector::new(0.2, -0.5, 0.4, 0.3);
        for hbar in [1.0, 0.5] {
            let psi = |y: FourVector, s: f64| delta_potential_propagator(y, xp, s, hbar);
            let r1 = schrodinger_residual(psi, &NoField, 0.0, hbar, x, 0.9, 1e-2).unwrap();
            let r2 = schrodinger_residual(psi, &NoField, 0.0, hbar, x, 0.9, 5e-3).unwrap();
            assert!(r2 < r1 / 3.5, "hbar {hbar}: {r1} {r2}");
        }
    }

    #[test]
    fn scaled_free_propagator_identity() {
        let spec = PropagatorSpec::free();
        let xp = FourVector::new(0.1, 0.2, 0.0, -0.4);
        for lambda in [0.5, 2.0, 3.0] {
            let a = spec.scaled_evaluate(lambda, x0(), xp, 0.6).unwrap();
            let b = spec.evaluate(x0(), xp, 0.6).unwrap();
            assert!((a - b).norm() <= 1e-14 * b.norm());
        }
    }

    proptest! {
        #[test]
        fn free_conjugation_symmetry(x in prop::array::uniform4(-3.0f64..3.0),
                                     xp in prop::array::uniform4(-3.0f64..3.0),
                                     s in 0.05f64..5.0) {
            let (x, xp) = (FourVector(x), FourVector(xp));
            let a = free_propagator(xp, x, s).unwrap();
            let b = free_propagator(x, xp, -s).unwrap().conj();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn short_s_modulus_is_gauge_blind(x in prop::array::uniform4(-3.0f64..3.0), s in 0.1f64..3.0,
                                          e in prop::array::uniform3(-1.0f64..1.0)) {
            let field = ConstantField::electric(e);
            let a = short_s_propagator(FourVector(x), FourVector::ZERO, s, &field, 1.0, 1.0).unwrap();
            let b = short_s_propagator(FourVector(x), FourVector::ZERO, s, &NoField, 1.0, 1.0).unwrap();
            prop_assert!((a.norm() - b.norm()).abs() <= 1e-15 * b.norm());
        }
    }
}
