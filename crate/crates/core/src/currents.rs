//! ECD currents: the gauge-invariant electric current and its light-cone
//! divergent part, the mass current b, the energy-momentum tensor p^{νμ},
//! the dilatation current ξ^μ, and the conservation audits.
//!
//! Every s-integral is folded about a centre, ∫_{c−S}^{c+S} = ∫_0^S [f(c+τ) + f(c−τ)],
//! so that charge conjugation (s ↦ −s, c ↦ −c) maps the quadrature onto
//! itself and sign flips are exact, not merely within tolerance.

use std::cell::RefCell;
use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{FieldProvider, PotentialProvider, Trajectory};
use crate::ecd::{EpsilonCalibration, FreeClosedForm, PhiSource, Worldline};
use crate::error::{domain, EcdError, Result};
use crate::minkowski::{grid_charge, CurrentField, EventGrid, FourVector, METRIC};
use crate::numerics::{linspace, loglog_fit, PowerLawFit};
use crate::quadrature::{integrate_breaks, integrate_vector, proxy_breaks, QuadratureOptions};
use crate::sources::{deposit_line, deposit_line_tensor, stress_tensor, DepositKernel, Tensor, TensorField};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// K = −C/(2π²𝒩), the amplitude of the free solution's sinc profile.
pub fn free_amplitude(c: Complex64, cal: &EpsilonCalibration) -> Complex64 {
    -c / (2.0 * PI * PI * cal.n)
}

/// |C|²/(4π⁴𝒩²ε) as it appears in front of the light-cone integral.
pub fn printed_divergent_coefficient(c: Complex64, cal: &EpsilonCalibration) -> f64 {
    c.norm_sqr() / (4.0 * PI.powi(4) * cal.n * cal.n * cal.epsilon)
}

/// Weight of the light-cone part of the free electric current,
/// 2πq|C|²/(4π⁴𝒩²ε). The 2π comes from the large-r limit of the
/// profile integral, ∫sinc²((t² − ρ²)/2)dt → 2π/ρ.
pub fn j_div_coefficient(c: Complex64, cal: &EpsilonCalibration, q: f64) -> f64 {
    2.0 * PI * q * printed_divergent_coefficient(c, cal)
}

fn sinc(y: f64) -> f64 {
    if y.abs() < 1e-4 {
        1.0 - y * y / 6.0
    } else {
        y.sin() / y
    }
}

/// F(c) = ∫_{−∞}^{∞} sinc²((t² + c)/2) dt.
///
/// Quarter-turn panels in t² up to T² = max(4|c|, |c| + 2000), then the
/// tail 2/w² − 2cos(w)/w² (w = t² + c): the smooth part by its series in
/// c/T², the oscillating part by two integrations by parts.
pub fn light_cone_profile(c: f64) -> Result<f64> {
    if !c.is_finite() {
        return Err(domain(format!("profile argument must be finite, got {c}")));
    }
    let t2 = (4.0 * c.abs()).max(c.abs() + 2000.0);
    let t_end = t2.sqrt();
    let k = (t2 / FRAC_PI_2).ceil() as usize;
    let mut breaks: Vec<f64> = (0..k).map(|i| (i as f64 * FRAC_PI_2).sqrt()).collect();
    if *breaks.last().unwrap_or(&0.0) < t_end {
        breaks.push(t_end);
    }
    let f = |t: f64| {
        let s = sinc(0.5 * (t * t + c));
        Complex64::new(s * s, 0.0)
    };
    let opts = QuadratureOptions {
        abs_tol: 0.0,
        rel_tol: 1e-13,
        max_panels: 4 * breaks.len() + 1000,
    };
    let body = integrate_breaks(f, &breaks, &opts)?.value.re;

    let ratio = -c / t2;
    let (mut smooth, mut pow) = (0.0, 1.0);
    for n in 0..400 {
        let term = (n as f64 + 1.0) * pow / (2.0 * n as f64 + 3.0);
        smooth += term;
        if term.abs() < 1e-18 * smooth.abs() {
            break;
        }
        pow *= ratio;
    }
    smooth *= 2.0 / (t2 * t_end);

    let w = t2 + c;
    let g = -2.0 / (w * w);
    let h1 = 1.0 / (t2 * w * w) + 4.0 / (w * w * w);
    let osc = -g * w.sin() / (2.0 * t_end) - h1 * w.cos() / (2.0 * t_end);
    Ok(2.0 * (body + smooth + osc))
}

fn sinc_prime(y: f64) -> f64 {
    if y.abs() < 1e-3 {
        -y / 3.0 + y * y * y / 30.0
    } else {
        (y * y.cos() - y.sin()) / (y * y)
    }
}

/// G(c) = ∫_{−∞}^{∞} t² sinc′((t² + c)/2)² dt, the profile of the mass current.
///
/// Same panels as [`light_cone_profile`]. With w = t² + c the integrand is
/// t²[2(1 + cos w)/w² − 8 sin w/w³ + 8(1 − cos w)/w⁴]; the tail keeps the
/// smooth parts by series and the oscillating ones to three orders.
pub fn light_cone_gradient_profile(c: f64) -> Result<f64> {
    if !c.is_finite() {
        return Err(domain(format!("profile argument must be finite, got {c}")));
    }
    let t2 = (4.0 * c.abs()).max(c.abs() + 2000.0);
    let t_end = t2.sqrt();
    let k = (t2 / FRAC_PI_2).ceil() as usize;
    let mut breaks: Vec<f64> = (0..k).map(|i| (i as f64 * FRAC_PI_2).sqrt()).collect();
    if *breaks.last().unwrap_or(&0.0) < t_end {
        breaks.push(t_end);
    }
    let f = |t: f64| {
        let d = sinc_prime(0.5 * (t * t + c));
        Complex64::new(t * t * d * d, 0.0)
    };
    let opts = QuadratureOptions {
        abs_tol: 0.0,
        rel_tol: 1e-13,
        max_panels: 4 * breaks.len() + 1000,
    };
    let body = integrate_breaks(f, &breaks, &opts)?.value.re;

    // ∫_T^∞ 2t²/w² = 2Σ(n+1)(−c)ⁿT^{−2n−1}/(2n+1),
    // ∫_T^∞ 8t²/w⁴ = 8Σ C(n+3, 3)(−c)ⁿT^{−2n−5}/(2n+5).
    let ratio = -c / t2;
    let (mut s2, mut s4, mut pow) = (0.0, 0.0, 1.0);
    for n in 0..400 {
        let nf = n as f64;
        let a = (nf + 1.0) * pow / (2.0 * nf + 1.0);
        let b = (nf + 1.0) * (nf + 2.0) * (nf + 3.0) / 6.0 * pow / (2.0 * nf + 5.0);
        s2 += a;
        s4 += b;
        if a.abs() < 1e-18 * s2.abs() && b.abs() < 1e-18 * s4.abs() {
            break;
        }
        pow *= ratio;
    }
    let smooth = 2.0 * s2 / t_end + 8.0 * s4 / (t2 * t2 * t_end);

    // Three integrations by parts (dw = 2t dt):
    // ∫_T^∞ p cos w ≈ [−p sin w − h₁ cos w + h₂ sin w]/(2T), h₁ = (p/2t)′, h₂ = (h₁/2t)′,
    // ∫_T^∞ r sin w ≈ [r cos w − k₁ sin w]/(2T), k₁ = (r/2t)′,
    // with p = 2t²/w² − 8t²/w⁴ and r = −8t²/w³ (the last term of p is kept to first order).
    let w = t2 + c;
    let (w2, w3, w4) = (w * w, w * w * w, w * w * w * w);
    let p = 2.0 * t2 / w2 - 8.0 * t2 / w4;
    let h1 = 1.0 / w2 - 4.0 * t2 / w3;
    let h2 = -1.0 / (2.0 * t2 * w2) - 4.0 / w3 + 12.0 * t2 / w4;
    let r = -8.0 * t2 / w3;
    let k1 = -4.0 / w3 + 24.0 * t2 / w4;
    let (sn, cs) = w.sin_cos();
    let osc = (-p * sn - h1 * cs + h2 * sn + r * cs - k1 * sn) / (2.0 * t_end);
    Ok(2.0 * (body + smooth + osc))
}

/// (u², z_min) for the free worldline through the origin: (x − us)² = u²(s − s_v)² + z_min.
fn free_geometry(d: FourVector, u: FourVector) -> Result<(f64, f64)> {
    let a = u.square();
    if !(a > 0.0) {
        return Err(domain("free current needs a timelike u"));
    }
    let ud = u.dot(&d);
    Ok((a, d.square() - ud * ud / a))
}

/// j⁰ of the free pair at x = (0, r, 0, 0): q|K|²u⁰(u²)^{-1/2}ε^{-3/2}F(z_min/ε).
pub fn free_charge_j0(r: f64, u: FourVector, c: Complex64, cal: &EpsilonCalibration, q: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(domain(format!("radius must be positive, got {r}")));
    }
    let (a, zmin) = free_geometry(FourVector::new(0.0, r, 0.0, 0.0), u)?;
    let k2 = free_amplitude(c, cal).norm_sqr();
    Ok(q * k2 * u.0[0] / a.sqrt() * cal.epsilon.powf(-1.5) * light_cone_profile(zmin / cal.epsilon)?)
}

/// The free pair's electric current j^μ(x) from the profile integral.
pub fn free_current(src: &FreeClosedForm, x: FourVector) -> Result<FourVector> {
    let cal = src.calibration;
    let (a, zmin) = free_geometry(x - src.origin, src.u)?;
    let k2 = src.amplitude().norm_sqr();
    let mag = src.q * k2 / a.sqrt() * cal.epsilon.powf(-1.5) * light_cone_profile(zmin / cal.epsilon)?;
    Ok(src.u * mag)
}

/// Bulk mass current of the free pair, ∫ds Re ∂_sφ*∂^μφ:
/// −|K|²u^μ[√A F(c)/2ε^{3/2} + G(c)/(√A ε^{5/2})], A = u², c = z_min/ε.
pub fn free_mass_current_bar(src: &FreeClosedForm, x: FourVector) -> Result<FourVector> {
    let eps = src.calibration.epsilon;
    let (a, zmin) = free_geometry(x - src.origin, src.u)?;
    let c = zmin / eps;
    let k2 = src.amplitude().norm_sqr();
    let mag = a.sqrt() * light_cone_profile(c)? / (2.0 * eps.powf(1.5)) + light_cone_gradient_profile(c)? / (a.sqrt() * eps.powf(2.5));
    Ok(src.u * (-k2 * mag))
}

/// Light-cone weights of the free b: the phase part −π|K|²/ε on γ̇²γ̇ and
/// the profile-gradient part −(2π/3)|K|²/ε³ on (γ̇·ξ)ξ^μ.
pub fn free_b_light_cone_coefficients(src: &FreeClosedForm) -> (f64, f64) {
    let eps = src.calibration.epsilon;
    let k2 = src.amplitude().norm_sqr();
    (-PI * k2 / eps, -2.0 * PI / 3.0 * k2 / eps.powi(3))
}

/// b̄ of the free pair minus both light-cone pieces.
pub fn free_mass_current_remainder(src: &FreeClosedForm, x: FourVector) -> Result<FourVector> {
    let (phase, gradient) = free_b_light_cone_coefficients(src);
    let bar = free_mass_current_bar(src, x)?;
    let lc1 = light_cone_current(&src.worldline, x, phase, LightConeWeight::MassSquared)?;
    let lc2 = light_cone_current(&src.worldline, x, gradient, LightConeWeight::Displacement)?;
    Ok(bar - lc1 - lc2)
}

/// Sampled on a grid, parallel over points.
pub fn free_current_field(src: &FreeClosedForm, grid: &EventGrid) -> Result<CurrentField> {
    let values = (0..grid.len())
        .into_par_iter()
        .map(|lin| free_current(src, grid.point_linear(lin)))
        .collect::<Result<Vec<_>>>()?;
    CurrentField::new(*grid, values, "free ECD current j")
}

/// Which free profile a remainder analysis refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreeProfile {
    /// f(ρ) = F(−ρ²), tail 2π/ρ (electric current).
    Charge,
    /// g(ρ) = G(−ρ²), tail 2πρ/3 (mass current).
    Mass,
}

impl FreeProfile {
    fn remainder_at(self, r2: f64) -> Result<f64> {
        let r = r2.sqrt();
        Ok(match self {
            FreeProfile::Charge => light_cone_profile(-r2)? - 2.0 * PI / r,
            FreeProfile::Mass => light_cone_gradient_profile(-r2)? - 2.0 * PI * r / 3.0,
        })
    }
}

/// Oscillating and smooth parts of a profile after removing its light-cone
/// tail, from four samples a quarter turn of ρ² apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemainderSample {
    pub rho: f64,
    pub remainder: f64,
    /// Amplitude of the cos(ρ² + φ) component.
    pub amplitude: f64,
    /// Mean over a full turn, i.e. the non-oscillating part.
    pub smooth: f64,
}

pub fn profile_remainder(profile: FreeProfile, rho: f64) -> Result<RemainderSample> {
    if !(rho > 0.0) {
        return Err(domain(format!("ρ must be positive, got {rho}")));
    }
    let r2 = rho * rho;
    let v: Vec<f64> = (0..4)
        .map(|k| profile.remainder_at(r2 + k as f64 * FRAC_PI_2))
        .collect::<Result<_>>()?;
    Ok(RemainderSample {
        rho,
        remainder: v[0],
        amplitude: (0.5 * (v[0] - v[2])).hypot(0.5 * (v[1] - v[3])),
        smooth: 0.25 * (v[0] + v[1] + v[2] + v[3]),
    })
}

/// [`profile_remainder`] for the charge profile.
pub fn free_profile_remainder(rho: f64) -> Result<RemainderSample> {
    profile_remainder(FreeProfile::Charge, rho)
}

/// Fit window and slopes of the post-subtraction remainder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderFit {
    pub profile: FreeProfile,
    pub samples: Vec<RemainderSample>,
    pub amplitude_fit: Option<PowerLawFit>,
    pub smooth_fit: Option<PowerLawFit>,
}

/// Log-log fits of the remainder's oscillation envelope and smooth part
/// over ρ ∈ [ρ₀, ρ₁].
pub fn fit_profile_remainder(profile: FreeProfile, rho0: f64, rho1: f64, points: usize) -> Result<RemainderFit> {
    let rhos = crate::numerics::geomspace(rho0, rho1, points.max(2));
    let samples = rhos
        .par_iter()
        .map(|&r| profile_remainder(profile, r))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = samples.iter().map(|s| s.rho).collect();
    let amp: Vec<f64> = samples.iter().map(|s| s.amplitude).collect();
    let smooth: Vec<f64> = samples.iter().map(|s| s.smooth.abs()).collect();
    Ok(RemainderFit {
        profile,
        amplitude_fit: loglog_fit(&xs, &amp),
        smooth_fit: loglog_fit(&xs, &smooth),
        samples,
    })
}

/// Which worldline weight the light-cone distribution carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LightConeWeight {
    /// γ̇ (electric current).
    Charge,
    /// γ̇²γ̇ (mass current, phase part).
    MassSquared,
    /// (γ̇·ξ)ξ^μ with ξ = x − γ (mass current, profile-gradient part).
    Displacement,
}

/// coefficient · ∫ds δ[(x − γ_s)²] w(s, γ, γ̇, ξ) = coefficient · Σ_roots w/(2|γ̇·ξ|), ξ = x − γ.
pub fn light_cone_current_with<W>(worldline: &Worldline, x: FourVector, coefficient: f64, weight: W) -> Result<FourVector>
where
    W: Fn(f64, FourVector, FourVector, FourVector) -> FourVector,
{
    let roots = worldline.light_cone_roots(x)?;
    if roots.len() != 2 {
        return Err(EcdError::Coverage(format!(
            "expected two light-cone crossings for x = {:?}, found {}",
            x.0,
            roots.len()
        )));
    }
    let mut acc = FourVector::ZERO;
    for s in roots {
        let (g, v) = worldline.state(s)?;
        let xi = x - g;
        let den = 2.0 * v.dot(&xi).abs();
        if !(den > 0.0) {
            return Err(EcdError::Singular(format!("x = {:?} lies on the worldline", x.0)));
        }
        acc += weight(s, g, v, xi) * (1.0 / den);
    }
    Ok(acc * coefficient)
}

pub fn light_cone_current(worldline: &Worldline, x: FourVector, coefficient: f64, weight: LightConeWeight) -> Result<FourVector> {
    light_cone_current_with(worldline, x, coefficient, |_, _, v, xi| match weight {
        LightConeWeight::Charge => v,
        LightConeWeight::MassSquared => v * v.square(),
        LightConeWeight::Displacement => xi * v.dot(&xi),
    })
}

/// Finite part of a current after removing its light-cone piece.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizedCurrent {
    pub finite: CurrentField,
    pub divergent_coefficient: f64,
    pub epsilon: f64,
    pub weight: LightConeWeight,
    /// ∫d³x of the finite j⁰ on each grid slice.
    pub slice_charges: Vec<f64>,
    /// max |finite| over the grid.
    pub finite_bound: f64,
}

pub fn subtract_divergent(
    j: &CurrentField,
    worldline: &Worldline,
    coefficient: f64,
    weight: LightConeWeight,
    cal: &EpsilonCalibration,
) -> Result<RegularizedCurrent> {
    let grid = j.grid;
    let finite = if coefficient == 0.0 {
        j.clone()
    } else {
        let div = (0..grid.len())
            .into_par_iter()
            .map(|lin| light_cone_current(worldline, grid.point_linear(lin), coefficient, weight))
            .collect::<Result<Vec<_>>>()?;
        let values = j.values.iter().zip(&div).map(|(a, b)| *a - *b).collect();
        CurrentField::new(grid, values, format!("{} (finite part)", j.label))?
    };
    let slice_charges = (0..grid.extents[0])
        .map(|k| grid_charge(&finite, k))
        .collect::<Result<Vec<_>>>()?;
    let finite_bound = finite.values.iter().fold(0.0f64, |m, v| m.max(v.max_abs()));
    Ok(RegularizedCurrent {
        finite,
        divergent_coefficient: coefficient,
        epsilon: cal.epsilon,
        weight,
        slice_charges,
        finite_bound,
    })
}

/// Conservation audit of a sampled current.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub label: String,
    pub slice_times: Vec<f64>,
    pub slice_charges: Vec<f64>,
    /// (max − min)/max|Q| over slices; 0 when every slice charge vanishes.
    pub charge_spread: f64,
    /// Interior max |∂_μ j^μ| (central differences).
    pub interior_divergence_max: f64,
    /// Interior max of Σ_μ |∂_μ j^μ| term by term.
    pub divergence_scale: f64,
    /// interior_divergence_max / divergence_scale.
    pub relative_divergence: f64,
    pub spacings: [f64; 4],
}

pub fn continuity_residual(j: &CurrentField) -> Result<AuditReport> {
    let grid = j.grid;
    if grid.extents.iter().any(|n| *n < 3) {
        return Err(domain(format!(
            "continuity audit needs at least 3 points per axis, got {:?}",
            grid.extents
        )));
    }
    let strides = grid.strides();
    let (mut div_max, mut scale) = (0.0f64, 0.0f64);
    for lin in 0..grid.len() {
        if !grid.is_interior(grid.multi(lin)) {
            continue;
        }
        let (mut acc, mut abs) = (0.0, 0.0);
        for a in 0..4 {
            let term = (j.values[lin + strides[a]].0[a] - j.values[lin - strides[a]].0[a]) / (2.0 * grid.spacings[a]);
            acc += term;
            abs += term.abs();
        }
        div_max = div_max.max(acc.abs());
        scale = scale.max(abs);
    }
    let slice_times = (0..grid.extents[0]).map(|k| grid.coordinate(0, k)).collect();
    let slice_charges: Vec<f64> = (0..grid.extents[0])
        .map(|k| grid_charge(j, k))
        .collect::<Result<_>>()?;
    let qmax = slice_charges.iter().fold(0.0f64, |m, q| m.max(q.abs()));
    let (lo, hi) = slice_charges
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| (lo.min(*q), hi.max(*q)));
    Ok(AuditReport {
        label: j.label.clone(),
        slice_times,
        charge_spread: if qmax > 0.0 { (hi - lo) / qmax } else { 0.0 },
        slice_charges,
        interior_divergence_max: div_max,
        divergence_scale: scale,
        relative_divergence: if scale > 0.0 { div_max / scale } else { 0.0 },
        spacings: grid.spacings,
    })
}

/// Settings for the s-integrals behind every sampled ECD current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentQuadrature {
    pub s_center: f64,
    pub s_half_width: f64,
    /// Probes per half-line used to place quarter-turn breakpoints.
    pub probes: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
    /// Spatial step of the covariant difference.
    pub h: f64,
    /// Step of the ∂_s difference.
    pub h_s: f64,
}

impl CurrentQuadrature {
    /// Steps tied to the solution's own scales (√ε in x, ε in s), so the
    /// discretisation is itself scale covariant.
    pub fn for_calibration(cal: &EpsilonCalibration, s_half_width: f64) -> Self {
        Self {
            s_center: 0.0,
            s_half_width,
            probes: 256,
            abs_tol: 0.0,
            rel_tol: 1e-8,
            max_panels: 400_000,
            h: 1e-3 * cal.epsilon.sqrt(),
            h_s: 1e-3 * cal.epsilon,
        }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let l2 = lambda * lambda;
        Self {
            s_center: self.s_center * l2,
            s_half_width: self.s_half_width * l2,
            h: self.h * lambda,
            h_s: self.h_s * l2,
            ..*self
        }
    }

    /// The same quadrature seen from the charge-conjugate solution.
    pub fn conjugated(&self) -> Self {
        Self {
            s_center: -self.s_center,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_half_width > 0.0) || !(self.h > 0.0) || !(self.h_s > 0.0) || self.probes < 2 {
            return Err(domain("current quadrature needs positive s_half_width, h, h_s and ≥ 2 probes"));
        }
        if !(self.rel_tol > 0.0 || self.abs_tol > 0.0) {
            return Err(domain("current quadrature needs a positive tolerance"));
        }
        Ok(())
    }

    fn options(&self) -> QuadratureOptions {
        QuadratureOptions {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_panels: self.max_panels,
        }
    }
}

/// φ, D_μφ (lower index) and ∂_sφ at one (x, s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub phi: Complex64,
    pub d: [Complex64; 4],
    pub ds: Complex64,
}

/// (q/ħ̄)∫ A_μ dx^μ along the segment from x to x + h e_μ (Simpson; exact
/// for potentials up to quadratic in x, which covers A + ∂α with α quadratic).
fn link_phase(potential: &dyn Fn(FourVector) -> FourVector, x: FourVector, mu: usize, h: f64, k: f64) -> f64 {
    let mut e = FourVector::ZERO;
    e.0[mu] = h;
    let comp = |y: FourVector| potential(y).lower().0[mu];
    k * h / 6.0 * (comp(x) + 4.0 * comp(x + e * 0.5) + comp(x + e))
}

/// Gauge-covariant central difference:
/// D_μφ ≈ ħ̄[e^{−iθ₊}φ(x + he_μ) − e^{iθ₋}φ(x − he_μ)]/2h with link phases θ±.
/// Under φ ↦ φe^{iqα/ħ̄}, A ↦ A + ∂α the result picks up exactly e^{iqα(x)/ħ̄}.
pub fn covariant_gradient<F>(
    phi: &F,
    potential: &dyn Fn(FourVector) -> FourVector,
    q: f64,
    hbar: f64,
    x: FourVector,
    s: f64,
    h: f64,
) -> Result<(Complex64, [Complex64; 4])>
where
    F: Fn(FourVector, f64) -> Result<Complex64> + ?Sized,
{
    let centre = phi(x, s)?;
    let k = q / hbar;
    let mut d = [Complex64::new(0.0, 0.0); 4];
    for mu in 0..4 {
        let mut e = FourVector::ZERO;
        e.0[mu] = h;
        let up = phi(x + e, s)? * (-I * link_phase(potential, x, mu, h, k)).exp();
        let down = phi(x - e, s)? * (I * link_phase(potential, x - e, mu, h, k)).exp();
        d[mu] = (up - down) * (hbar / (2.0 * h));
    }
    Ok((centre, d))
}

pub fn jet(src: &dyn PhiSource, x: FourVector, s: f64, h: f64, h_s: f64, with_ds: bool) -> Result<Jet> {
    let pot = |y: FourVector| src.potential_at(y);
    let f = |y: FourVector, t: f64| src.phi(y, t);
    let (phi, d) = covariant_gradient(&f, &pot, src.charge(), src.hbar(), x, s, h)?;
    let ds = if with_ds {
        (src.phi(x, s + h_s)? - src.phi(x, s - h_s)?) / (2.0 * h_s)
    } else {
        Complex64::new(0.0, 0.0)
    };
    Ok(Jet { phi, d, ds })
}

/// J^μ = q Im φ*D^μφ.
pub fn electric_density(jet: &Jet, q: f64) -> [f64; 4] {
    std::array::from_fn(|mu| q * METRIC[mu] * (jet.phi.conj() * jet.d[mu]).im)
}

/// B̄^μ = Re ∂_sφ* D^μφ.
pub fn mass_density(jet: &Jet) -> [f64; 4] {
    std::array::from_fn(|mu| METRIC[mu] * (jet.ds.conj() * jet.d[mu]).re)
}

/// Bulk 𝓛_m = (iħ̄/2)(φ*∂_sφ − ∂_sφ*φ) − ½(D^μφ)*D_μφ (δ-term excluded).
pub fn bulk_lagrangian(jet: &Jet, hbar: f64) -> f64 {
    let kinetic: f64 = (0..4).map(|mu| METRIC[mu] * jet.d[mu].norm_sqr()).sum();
    -hbar * (jet.phi.conj() * jet.ds).im - 0.5 * kinetic
}

const UPPER: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

/// Upper triangle of g^{νμ}𝓛_m − Re D^νφ(D^μφ)*, plus 𝓛_m itself.
fn matter_tensor_density(jet: &Jet, hbar: f64) -> [f64; 11] {
    let l = bulk_lagrangian(jet, hbar);
    let mut out = [0.0; 11];
    for (k, &(nu, mu)) in UPPER.iter().enumerate() {
        let g = if nu == mu { METRIC[nu] } else { 0.0 };
        out[k] = g * l - METRIC[nu] * METRIC[mu] * (jet.d[nu] * jet.d[mu].conj()).re;
    }
    out[10] = l;
    out
}

/// One folded s-integral with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SIntegral<const N: usize> {
    pub value: [f64; N],
    pub error: f64,
    /// Truncation estimate: max-norm of the [S/2, S] shell.
    pub tail: f64,
    pub evaluations: usize,
}

/// ∫ds density(jet(x, s), s) over [c − S, c + S], folded about c, with
/// quarter-turn panels in (x − γ_s)²/ε on both branches.
pub fn s_integral<const N: usize, F>(
    src: &dyn PhiSource,
    x: FourVector,
    quad: &CurrentQuadrature,
    with_ds: bool,
    density: F,
) -> Result<SIntegral<N>>
where
    F: Fn(&Jet, f64) -> [f64; N],
{
    quad.validate()?;
    let (c, big_s) = (quad.s_center, quad.s_half_width);
    let wl = src.worldline();
    wl.covers(c - big_s - quad.h_s, c + big_s + quad.h_s)?;
    let eps = src.calibration().epsilon;
    let probes = linspace(0.0, big_s, quad.probes);
    let theta = |sign: f64| {
        move |tau: f64| match wl.state(c + sign * tau) {
            Ok((g, _)) => (x - g).square() / eps,
            Err(_) => 0.0,
        }
    };
    let mut breaks = proxy_breaks(theta(1.0), &probes);
    breaks.extend(proxy_breaks(theta(-1.0), &probes));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let failure: RefCell<Option<EcdError>> = RefCell::new(None);
    let eval = |s: f64| -> [f64; N] {
        match jet(src, x, s, quad.h, quad.h_s, with_ds) {
            Ok(j) => density(&j, s),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                [f64::NAN; N]
            }
        }
    };
    let folded = |tau: f64| -> Result<[f64; N]> {
        let (a, b) = (eval(c + tau), eval(c - tau));
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        Ok(std::array::from_fn(|k| a[k] + b[k]))
    };
    // Inner and outer halves separately: the outer shell [S/2, S] doubles
    // as the truncation estimate, whatever the decay law.
    let half = 0.5 * big_s;
    let split = breaks.partition_point(|b| *b < half);
    let mut inner: Vec<f64> = breaks[..split].to_vec();
    inner.push(half);
    let mut outer = vec![half];
    outer.extend(breaks[split..].iter().copied().filter(|b| *b > half));
    let a = integrate_vector(&folded, &inner, &quad.options())?;
    let b = integrate_vector(&folded, &outer, &quad.options())?;
    Ok(SIntegral {
        value: std::array::from_fn(|k| a.value[k] + b.value[k]),
        error: a.error + b.error,
        tail: b.value.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        evaluations: a.evaluations + b.evaluations,
    })
}

/// j^μ(x) at one event, with its quadrature diagnostics.
pub fn electric_current_at(src: &dyn PhiSource, x: FourVector, quad: &CurrentQuadrature) -> Result<SIntegral<4>> {
    let q = src.charge();
    s_integral(src, x, quad, false, |j, _| electric_density(j, q))
}

/// ∫ds B̄^μ(x, s) at one event (the bulk part of b).
pub fn mass_current_bar_at(src: &dyn PhiSource, x: FourVector, quad: &CurrentQuadrature) -> Result<SIntegral<4>> {
    s_integral(src, x, quad, true, |j, _| mass_density(j))
}

/// A sampled current with the worst quadrature diagnostics over the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledCurrent {
    pub current: CurrentField,
    pub max_quadrature_error: f64,
    pub max_tail_bound: f64,
    pub evaluations: usize,
}

fn sample_grid<const N: usize, F>(
    src: &dyn PhiSource,
    grid: &EventGrid,
    quad: &CurrentQuadrature,
    with_ds: bool,
    density: F,
) -> Result<Vec<SIntegral<N>>>
where
    F: Fn(&Jet, f64) -> [f64; N] + Sync,
{
    (0..grid.len())
        .into_par_iter()
        .map(|lin| s_integral(src, grid.point_linear(lin), quad, with_ds, &density))
        .collect()
}

fn to_current(grid: &EventGrid, rows: &[SIntegral<4>], label: &str) -> Result<SampledCurrent> {
    let values = rows.iter().map(|r| FourVector(r.value)).collect();
    Ok(SampledCurrent {
        current: CurrentField::new(*grid, values, label)?,
        max_quadrature_error: rows.iter().fold(0.0, |m, r| m.max(r.error)),
        max_tail_bound: rows.iter().fold(0.0, |m, r| m.max(r.tail)),
        evaluations: rows.iter().map(|r| r.evaluations).sum(),
    })
}

/// j^μ(x) = ∫ds q Im φ*D^μφ on every grid point.
pub fn ecd_electric_current(src: &dyn PhiSource, grid: &EventGrid, quad: &CurrentQuadrature) -> Result<SampledCurrent> {
    let q = src.charge();
    if q == 0.0 {
        return Ok(SampledCurrent {
            current: CurrentField::zeros(*grid, "ECD electric current j"),
            max_quadrature_error: 0.0,
            max_tail_bound: 0.0,
            evaluations: 0,
        });
    }
    let rows = sample_grid(src, grid, quad, false, |j, _| electric_density(j, q))?;
    to_current(grid, &rows, "ECD electric current j")
}

/// A uniform worldline sampled densely enough to cross every grid slice.
pub fn deposit_trajectory(worldline: &Worldline, grid: &EventGrid, q: f64) -> Result<Trajectory> {
    match worldline {
        Worldline::Sampled { trajectory } => Ok(trajectory.clone()),
        Worldline::Uniform { origin, u } => {
            if u.0[0] == 0.0 {
                return Err(domain("worldline with γ̇⁰ = 0 never crosses a time slice"));
            }
            let (t0, t1) = (grid.coordinate(0, 0), grid.coordinate(0, grid.extents[0] - 1));
            let (sa, sb) = ((t0 - origin.0[0]) / u.0[0], (t1 - origin.0[0]) / u.0[0]);
            let (lo, hi) = (sa.min(sb), sa.max(sb));
            let pad = 1.0 + 0.1 * (hi - lo);
            Trajectory::uniform(*origin, *u, q, lo - pad, hi + pad, 16)
        }
    }
}

/// The b current split into its bulk and trajectory-supported pieces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassCurrent {
    pub bar: SampledCurrent,
    pub breve: CurrentField,
    pub total: CurrentField,
}

fn deposit_breve(
    src: &dyn PhiSource,
    grid: &EventGrid,
    kernel: DepositKernel,
    s_weight: impl Fn(f64) -> f64,
    label: &str,
) -> Result<CurrentField> {
    let traj = deposit_trajectory(src.worldline(), grid, src.charge())?;
    let n = src.calibration().n;
    let failure: RefCell<Option<EcdError>> = RefCell::new(None);
    let field = deposit_line(&traj, grid, kernel, label, |s, g, v| match src.phi(g, s) {
        Ok(p) => v * (2.0 / n * p.norm_sqr() * s_weight(s)),
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            FourVector::ZERO
        }
    });
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    field
}

/// b = ∫ds (B̄ + B̆), B̄^μ = Re ∂_sφ*D^μφ, B̆^μ = (2/𝒩)|φ|²δ⁴(x − γ_s)γ̇^μ.
pub fn mass_current_b(
    src: &dyn PhiSource,
    grid: &EventGrid,
    quad: &CurrentQuadrature,
    kernel: DepositKernel,
) -> Result<MassCurrent> {
    let rows = sample_grid(src, grid, quad, true, |j, _| mass_density(j))?;
    let bar = to_current(grid, &rows, "mass current b (bulk)")?;
    let breve = deposit_breve(src, grid, kernel, |_| 1.0, "mass current b (trajectory)")?;
    let total = bar.current.add(&breve, 1.0, "mass current b")?;
    Ok(MassCurrent { bar, breve, total })
}

/// p^{νμ} = Θ^{νμ} + Σ m^{νμ} with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyMomentum {
    pub tensor: TensorField,
    /// max |∫ds 𝓛_m| over the grid (bulk part, reported separately).
    pub bulk_lagrangian_max: f64,
    pub max_quadrature_error: f64,
    pub max_tail_bound: f64,
}

/// p^{νμ} = Θ^{νμ} + Σ_k ∫ds [g^{νμ}𝓛_m − ½(D^νφ(D^μφ)* + c.c.)].
///
/// The δ-term of 𝓛_m is deposited on each worldline as g^{νμ}(2/𝒩)|φ|²
/// with the same kernel as B̆.
pub fn ecd_energy_momentum(
    sources: &[&dyn PhiSource],
    field: &dyn FieldProvider,
    grid: &EventGrid,
    quad: &CurrentQuadrature,
    kernel: DepositKernel,
) -> Result<EnergyMomentum> {
    let mut values: Vec<Tensor> = (0..grid.len())
        .into_par_iter()
        .map(|lin| stress_tensor(&field.field(grid.point_linear(lin))))
        .collect();
    let (mut lag_max, mut err_max, mut tail_max) = (0.0f64, 0.0f64, 0.0f64);
    for src in sources {
        let hbar = src.hbar();
        let rows = sample_grid(*src, grid, quad, true, |j, _| matter_tensor_density(j, hbar))?;
        for (t, r) in values.iter_mut().zip(&rows) {
            for (k, &(nu, mu)) in UPPER.iter().enumerate() {
                t[nu][mu] += r.value[k];
                if nu != mu {
                    t[mu][nu] = t[nu][mu];
                }
            }
            lag_max = lag_max.max(r.value[10].abs());
            err_max = err_max.max(r.error);
            tail_max = tail_max.max(r.tail);
        }
        let traj = deposit_trajectory(src.worldline(), grid, src.charge())?;
        let n = src.calibration().n;
        let failure: RefCell<Option<EcdError>> = RefCell::new(None);
        let delta = deposit_line_tensor(&traj, grid, kernel, "δ-term", |s, g, _| {
            let w = match src.phi(g, s) {
                Ok(p) => 2.0 / n * p.norm_sqr(),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            };
            std::array::from_fn(|i| std::array::from_fn(|j| if i == j { METRIC[i] * w } else { 0.0 }))
        })?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        for (t, d) in values.iter_mut().zip(&delta.values) {
            for i in 0..4 {
                t[i][i] += d[i][i];
            }
        }
    }
    Ok(EnergyMomentum {
        tensor: TensorField::new(*grid, values, true, "ECD energy-momentum p")?,
        bulk_lagrangian_max: lag_max,
        max_quadrature_error: err_max,
        max_tail_bound: tail_max,
    })
}

/// ξ^μ and the pieces it is assembled from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DilatationCurrent {
    pub xi: CurrentField,
    pub momentum: EnergyMomentum,
    /// Σ_k 2∫ds (s − s₀)(B̄^μ + B̆^μ), subtracted from p^{μν}x_ν.
    pub particle_term: CurrentField,
}

/// ξ^μ = p^{μν}x_ν − Σ_k 2∫ds (s − s₀)(B̄^μ + B̆^μ), s₀ the s-origin.
pub fn ecd_dilatation_current(
    sources: &[&dyn PhiSource],
    field: &dyn FieldProvider,
    grid: &EventGrid,
    quad: &CurrentQuadrature,
    kernel: DepositKernel,
    s_origin: f64,
) -> Result<DilatationCurrent> {
    let momentum = ecd_energy_momentum(sources, field, grid, quad, kernel)?;
    let mut particle = CurrentField::zeros(*grid, "dilatation particle term");
    for src in sources {
        let rows = sample_grid(*src, grid, quad, true, |j, s| mass_density(j).map(|v| 2.0 * (s - s_origin) * v))?;
        let bulk = to_current(grid, &rows, "s-weighted B̄")?;
        let breve = deposit_breve(*src, grid, kernel, |s| 2.0 * (s - s_origin), "s-weighted B̆")?;
        particle = particle
            .add(&bulk.current, 1.0, "dilatation particle term")?
            .add(&breve, 1.0, "dilatation particle term")?;
    }
    let values = (0..grid.len())
        .map(|lin| {
            let xl = grid.point_linear(lin).lower();
            let t = &momentum.tensor.values[lin];
            let px = FourVector(std::array::from_fn(|mu| (0..4).map(|nu| t[mu][nu] * xl.0[nu]).sum()));
            px - particle.values[lin]
        })
        .collect();
    Ok(DilatationCurrent {
        xi: CurrentField::new(*grid, values, "ECD dilatation current xi")?,
        momentum,
        particle_term: particle,
    })
}

/// |∂_s(fg*) − ∂_μ[(i/2ħ̄)(D^μf g* − f(D^μg)*)]| by central differences.
#[allow(clippy::too_many_arguments)]
pub fn unitarity_lemma_residual<F, G>(
    f: &F,
    g: &G,
    potential: &dyn PotentialProvider,
    q: f64,
    hbar: f64,
    x: FourVector,
    s: f64,
    h: f64,
) -> Result<f64>
where
    F: Fn(FourVector, f64) -> Result<Complex64> + ?Sized,
    G: Fn(FourVector, f64) -> Result<Complex64> + ?Sized,
{
    if !(h > 0.0) {
        return Err(domain("finite-difference step must be positive"));
    }
    let lhs = (f(x, s + h)? * g(x, s + h)?.conj() - f(x, s - h)? * g(x, s - h)?.conj()) / (2.0 * h);
    let pot = |y: FourVector| potential.potential(y);
    let flux = |y: FourVector, mu: usize| -> Result<Complex64> {
        let (fv, df) = covariant_gradient(f, &pot, q, hbar, y, s, h)?;
        let (gv, dg) = covariant_gradient(g, &pot, q, hbar, y, s, h)?;
        Ok(I / (2.0 * hbar) * METRIC[mu] * (df[mu] * gv.conj() - fv * dg[mu].conj()))
    };
    let mut rhs = Complex64::new(0.0, 0.0);
    for mu in 0..4 {
        let mut e = FourVector::ZERO;
        e.0[mu] = h;
        rhs += (flux(x + e, mu)? - flux(x - e, mu)?) / (2.0 * h);
    }
    Ok((lhs - rhs).norm())
}

/// |∂_s|φ|² + ħ̄⁻¹∂_μ Im φ*D^μφ|, the s-continuity equation per unit charge.
pub fn s_continuity_residual<F>(
    phi: &F,
    potential: &dyn PotentialProvider,
    q: f64,
    hbar: f64,
    x: FourVector,
    s: f64,
    h: f64,
) -> Result<f64>
where
    F: Fn(FourVector, f64) -> Result<Complex64> + ?Sized,
{
    unitarity_lemma_residual(phi, phi, potential, q, hbar, x, s, h)
}
