//! The s-parametrized classical charge: Lorentz-force integration,
//! effective mass, and the scaling and charge-conjugation maps.

use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{domain, EcdError, Result};
use crate::minkowski::{AntisymTensor, FourVector};

/// External field F(x) with an optional variation length λ_F.
pub trait FieldProvider: Sync {
    fn field(&self, x: FourVector) -> AntisymTensor;

    /// Length over which F changes appreciably; `None` means unbounded.
    fn variation_scale(&self) -> Option<f64> {
        None
    }
}

/// Four-potential A^μ(x) whose curl is the provider's field.
pub trait PotentialProvider: FieldProvider {
    fn potential(&self, x: FourVector) -> FourVector;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoField;

impl FieldProvider for NoField {
    fn field(&self, _: FourVector) -> AntisymTensor {
        AntisymTensor::ZERO
    }
}

impl PotentialProvider for NoField {
    fn potential(&self, _: FourVector) -> FourVector {
        FourVector::ZERO
    }
}

/// Homogeneous field in the symmetric gauge A^μ = −½F^{μν}x_ν.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantField {
    pub f: AntisymTensor,
}

impl ConstantField {
    pub fn new(f: AntisymTensor) -> Self {
        Self { f }
    }

    pub fn electric(e: [f64; 3]) -> Self {
        Self::new(AntisymTensor::from_e_b(e, [0.0; 3]))
    }
}

impl FieldProvider for ConstantField {
    fn field(&self, _: FourVector) -> AntisymTensor {
        self.f
    }
}

impl PotentialProvider for ConstantField {
    fn potential(&self, x: FourVector) -> FourVector {
        self.f.apply(x) * -0.5
    }
}

/// Static electric field E_z = E₀ cos(z/λ_F) from A⁰ = −E₀λ_F sin(z/λ_F).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandingField {
    pub amplitude: f64,
    pub length: f64,
}

impl FieldProvider for StandingField {
    fn field(&self, x: FourVector) -> AntisymTensor {
        let ez = self.amplitude * (x.0[3] / self.length).cos();
        AntisymTensor::from_e_b([0.0, 0.0, ez], [0.0; 3])
    }

    fn variation_scale(&self) -> Option<f64> {
        Some(self.length)
    }
}

impl PotentialProvider for StandingField {
    fn potential(&self, x: FourVector) -> FourVector {
        FourVector::new(-self.amplitude * self.length * (x.0[3] / self.length).sin(), 0.0, 0.0, 0.0)
    }
}

/// Image of a field under the scaling map: A′(x) = λ⁻¹A(λ⁻¹x), F′(x) = λ⁻²F(λ⁻¹x).
#[derive(Debug, Clone, Copy)]
pub struct ScaledField<'a, P: ?Sized> {
    pub inner: &'a P,
    pub lambda: f64,
}

impl<P: FieldProvider + ?Sized> FieldProvider for ScaledField<'_, P> {
    fn field(&self, x: FourVector) -> AntisymTensor {
        self.inner.field(x * (1.0 / self.lambda)).scale(self.lambda.powi(-2))
    }

    fn variation_scale(&self) -> Option<f64> {
        self.inner.variation_scale().map(|l| l * self.lambda)
    }
}

impl<P: PotentialProvider + ?Sized> PotentialProvider for ScaledField<'_, P> {
    fn potential(&self, x: FourVector) -> FourVector {
        self.inner.potential(x * (1.0 / self.lambda)) * (1.0 / self.lambda)
    }
}

/// The field with A ↦ −A.
#[derive(Debug, Clone, Copy)]
pub struct ReversedField<'a, P: ?Sized>(pub &'a P);

impl<P: FieldProvider + ?Sized> FieldProvider for ReversedField<'_, P> {
    fn field(&self, x: FourVector) -> AntisymTensor {
        -self.0.field(x)
    }

    fn variation_scale(&self) -> Option<f64> {
        self.0.variation_scale()
    }
}

impl<P: PotentialProvider + ?Sized> PotentialProvider for ReversedField<'_, P> {
    fn potential(&self, x: FourVector) -> FourVector {
        -self.0.potential(x)
    }
}

/// Gauge function α(x) = k·x + ½c x·x (Minkowski products).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeFunction {
    pub linear: FourVector,
    #[serde(default)]
    pub quadratic: f64,
}

impl GaugeFunction {
    pub fn value(&self, x: FourVector) -> f64 {
        self.linear.dot(&x) + 0.5 * self.quadratic * x.square()
    }

    /// ∂^μα.
    pub fn gradient(&self, x: FourVector) -> FourVector {
        self.linear + x * self.quadratic
    }
}

/// Owned, serializable field description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldSpec {
    None,
    Constant {
        #[serde(default)]
        e: [f64; 3],
        #[serde(default)]
        b: [f64; 3],
    },
    Standing {
        amplitude: f64,
        length: f64,
    },
    Scaled {
        inner: Box<FieldSpec>,
        lambda: f64,
    },
    Reversed {
        inner: Box<FieldSpec>,
    },
    /// Same field, potential shifted by ∂α.
    Gauge {
        inner: Box<FieldSpec>,
        alpha: GaugeFunction,
    },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::None
    }
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            FieldSpec::Standing { amplitude, length } => {
                if !(*length > 0.0) || !amplitude.is_finite() {
                    return Err(domain("standing field needs a finite amplitude and positive length"));
                }
                Ok(())
            }
            FieldSpec::Scaled { inner, lambda } => {
                if !(*lambda > 0.0) {
                    return Err(domain(format!("scale factor must be positive, got {lambda}")));
                }
                inner.validate()
            }
            FieldSpec::Reversed { inner } | FieldSpec::Gauge { inner, .. } => inner.validate(),
            FieldSpec::Constant { e, b } => {
                if e.iter().chain(b).all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(domain("constant field components must be finite"))
                }
            }
            FieldSpec::None => Ok(()),
        }
    }

    pub fn scaled(&self, lambda: f64) -> FieldSpec {
        match self {
            FieldSpec::None => FieldSpec::None,
            other => FieldSpec::Scaled {
                inner: Box::new(other.clone()),
                lambda,
            },
        }
    }

    pub fn reversed(&self) -> FieldSpec {
        match self {
            FieldSpec::None => FieldSpec::None,
            FieldSpec::Reversed { inner } => (**inner).clone(),
            other => FieldSpec::Reversed {
                inner: Box::new(other.clone()),
            },
        }
    }

    pub fn gauge_shifted(&self, alpha: GaugeFunction) -> FieldSpec {
        FieldSpec::Gauge {
            inner: Box::new(self.clone()),
            alpha,
        }
    }
}

impl FieldProvider for FieldSpec {
    fn field(&self, x: FourVector) -> AntisymTensor {
        match self {
            FieldSpec::None => AntisymTensor::ZERO,
            FieldSpec::Constant { e, b } => AntisymTensor::from_e_b(*e, *b),
            FieldSpec::Standing { amplitude, length } => StandingField {
                amplitude: *amplitude,
                length: *length,
            }
            .field(x),
            FieldSpec::Scaled { inner, lambda } => inner.field(x * (1.0 / lambda)).scale(lambda.powi(-2)),
            FieldSpec::Reversed { inner } => -inner.field(x),
            FieldSpec::Gauge { inner, .. } => inner.field(x),
        }
    }

    fn variation_scale(&self) -> Option<f64> {
        match self {
            FieldSpec::Standing { length, .. } => Some(*length),
            FieldSpec::Scaled { inner, lambda } => inner.variation_scale().map(|l| l * lambda),
            FieldSpec::Reversed { inner } | FieldSpec::Gauge { inner, .. } => inner.variation_scale(),
            _ => None,
        }
    }
}

impl PotentialProvider for FieldSpec {
    fn potential(&self, x: FourVector) -> FourVector {
        match self {
            FieldSpec::None => FourVector::ZERO,
            FieldSpec::Constant { e, b } => ConstantField::new(AntisymTensor::from_e_b(*e, *b)).potential(x),
            FieldSpec::Standing { amplitude, length } => StandingField {
                amplitude: *amplitude,
                length: *length,
            }
            .potential(x),
            FieldSpec::Scaled { inner, lambda } => inner.potential(x * (1.0 / lambda)) * (1.0 / lambda),
            FieldSpec::Reversed { inner } => -inner.potential(x),
            FieldSpec::Gauge { inner, alpha } => inner.potential(x) + alpha.gradient(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s: f64,
    pub gamma: FourVector,
    pub gamma_dot: FourVector,
}

/// Worldline samples (s, γ, γ̇) with strictly increasing s, plus charge q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    samples: Vec<Sample>,
    pub q: f64,
}

impl Trajectory {
    pub fn new(samples: Vec<Sample>, q: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(domain("trajectory needs at least one sample"));
        }
        if samples.windows(2).any(|w| !(w[1].s > w[0].s)) {
            return Err(domain("trajectory samples must have strictly increasing s"));
        }
        Ok(Self { samples, q })
    }

    /// Free motion γ(s) = x₀ + u s sampled on `n` points of [s0, s1].
    pub fn uniform(x0: FourVector, u: FourVector, q: f64, s0: f64, s1: f64, n: usize) -> Result<Self> {
        if n < 2 || !(s1 > s0) {
            return Err(domain("uniform trajectory needs n ≥ 2 and s1 > s0"));
        }
        let samples = (0..n)
            .map(|i| {
                let s = s0 + (s1 - s0) * i as f64 / (n - 1) as f64;
                Sample {
                    s,
                    gamma: x0 + u * s,
                    gamma_dot: u,
                }
            })
            .collect();
        Self::new(samples, q)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.samples[0].s, self.samples[self.samples.len() - 1].s)
    }

    /// Cubic Hermite interpolation of (γ, γ̇) at s inside the sampled range.
    pub fn interpolate(&self, s: f64) -> Result<(FourVector, FourVector)> {
        let (lo, hi) = self.s_range();
        if !(s >= lo && s <= hi) {
            return Err(EcdError::Coverage(format!("s = {s} outside trajectory range [{lo}, {hi}]")));
        }
        let k = self.samples.partition_point(|p| p.s <= s).clamp(1, self.samples.len() - 1);
        if self.samples.len() == 1 {
            return Ok((self.samples[0].gamma, self.samples[0].gamma_dot));
        }
        let (a, b) = (&self.samples[k - 1], &self.samples[k]);
        let h = b.s - a.s;
        let t = (s - a.s) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let gamma = a.gamma * h00 + a.gamma_dot * (h10 * h) + b.gamma * h01 + b.gamma_dot * (h11 * h);
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        let gamma_dot = a.gamma * d00 + a.gamma_dot * d10 + b.gamma * d01 + b.gamma_dot * d11;
        Ok((gamma, gamma_dot))
    }

    /// max |γ̇²(s) − γ̇²(s₀)| over the samples.
    pub fn gamma_dot_sq_drift(&self) -> f64 {
        let m0 = self.samples[0].gamma_dot.square();
        self.samples
            .iter()
            .fold(0.0, |m, p| m.max((p.gamma_dot.square() - m0).abs()))
    }

    /// Writes columns s, γ⁰..γ³, γ̇⁰..γ̇³, γ̇² − γ̇²(s₀) in round-trip precision.
    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "s", "gamma0", "gamma1", "gamma2", "gamma3", "gamma_dot0", "gamma_dot1", "gamma_dot2", "gamma_dot3",
            "drift",
        ])?;
        let m0 = self.samples[0].gamma_dot.square();
        for p in &self.samples {
            let mut row = vec![p.s.to_string()];
            row.extend(p.gamma.0.iter().map(f64::to_string));
            row.extend(p.gamma_dot.0.iter().map(f64::to_string));
            row.push((p.gamma_dot.square() - m0).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorMethod {
    Rk4,
    /// Midpoint drift plus a Cayley velocity rotation; preserves γ̇² exactly.
    Leapfrog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: IntegratorMethod,
    pub step: f64,
    pub tolerance: f64,
}

impl IntegratorConfig {
    pub fn rk4(step: f64, tolerance: f64) -> Result<Self> {
        let cfg = Self {
            method: IntegratorMethod::Rk4,
            step,
            tolerance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.tolerance > 0.0) {
            return Err(domain("integrator step and tolerance must be positive"));
        }
        Ok(())
    }
}

/// γ̈^μ = qF^μ_ν(γ)γ̇^ν.
pub fn lorentz_rhs(gamma: FourVector, gamma_dot: FourVector, field: &dyn FieldProvider, q: f64) -> FourVector {
    field.field(gamma).apply(gamma_dot) * q
}

fn rk4_step(
    x: FourVector,
    v: FourVector,
    h: f64,
    field: &dyn FieldProvider,
    q: f64,
) -> (FourVector, FourVector) {
    let a1 = lorentz_rhs(x, v, field, q);
    let (x2, v2) = (x + v * (0.5 * h), v + a1 * (0.5 * h));
    let a2 = lorentz_rhs(x2, v2, field, q);
    let (x3, v3) = (x + v2 * (0.5 * h), v + a2 * (0.5 * h));
    let a3 = lorentz_rhs(x3, v3, field, q);
    let (x4, v4) = (x + v3 * h, v + a3 * h);
    let a4 = lorentz_rhs(x4, v4, field, q);
    let xn = x + (v + v2 * 2.0 + v3 * 2.0 + v4) * (h / 6.0);
    let vn = v + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
    (xn, vn)
}

fn leapfrog_step(
    x: FourVector,
    v: FourVector,
    h: f64,
    field: &dyn FieldProvider,
    q: f64,
) -> Result<(FourVector, FourVector)> {
    let xm = x + v * (0.5 * h);
    let m = Matrix4::from_fn(|i, j| field.field(xm).mixed()[i][j] * q * 0.5 * h);
    let lhs = Matrix4::identity() - m;
    let rhs = (Matrix4::identity() + m) * Vector4::from_column_slice(&v.0);
    let vn = lhs.lu().solve(&rhs).ok_or_else(|| EcdError::Numeric {
        s: f64::NAN,
        detail: "singular Cayley rotation".into(),
    })?;
    let vn = FourVector([vn[0], vn[1], vn[2], vn[3]]);
    Ok((xm + vn * (0.5 * h), vn))
}

/// Fixed-step integration of the Lorentz-force EOM over `s_span`.
pub fn integrate_worldline(
    initial: (FourVector, FourVector),
    field: &dyn FieldProvider,
    q: f64,
    s_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let (s0, s1) = s_span;
    if !(s1 > s0) {
        return Err(domain(format!("s span [{s0}, {s1}] must be increasing")));
    }
    let ratio = (s1 - s0) / cfg.step;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) || n < 1.0 {
        return Err(domain(format!("step {} does not divide span length {}", cfg.step, s1 - s0)));
    }
    let n = n as usize;
    let mut samples = Vec::with_capacity(n + 1);
    let (mut x, mut v) = initial;
    samples.push(Sample {
        s: s0,
        gamma: x,
        gamma_dot: v,
    });
    for i in 1..=n {
        let s_prev = s0 + (i - 1) as f64 * cfg.step;
        (x, v) = match cfg.method {
            IntegratorMethod::Rk4 => rk4_step(x, v, cfg.step, field, q),
            IntegratorMethod::Leapfrog => leapfrog_step(x, v, cfg.step, field, q)
                .map_err(|_| EcdError::Numeric { s: s_prev, detail: "singular Cayley rotation".into() })?,
        };
        if !x.is_finite() || !v.is_finite() {
            return Err(EcdError::Numeric {
                s: s_prev,
                detail: "non-finite state".into(),
            });
        }
        samples.push(Sample {
            s: s0 + i as f64 * cfg.step,
            gamma: x,
            gamma_dot: v,
        });
    }
    let traj = Trajectory::new(samples, q)?;
    let drift = traj.gamma_dot_sq_drift();
    if drift > cfg.tolerance {
        return Err(EcdError::Accuracy {
            context: "γ̇² conservation along the integrated worldline".into(),
            achieved: drift,
            requested: cfg.tolerance,
        });
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassKind {
    Timelike,
    Tachyonic,
    Null,
}

/// Mean of γ̇² over the samples and its causal classification.
pub fn effective_mass(traj: &Trajectory) -> (f64, MassKind) {
    let n = traj.samples.len() as f64;
    // Summing in value order makes the mean independent of sample order,
    // so conjugated (reversed) worldlines reproduce it bit for bit.
    let mut sq: Vec<f64> = traj.samples.iter().map(|p| p.gamma_dot.square()).collect();
    sq.sort_by(f64::total_cmp);
    let m2 = crate::numerics::compensated_sum(sq) / n;
    let kind = if m2 > 0.0 {
        MassKind::Timelike
    } else if m2 < 0.0 {
        MassKind::Tachyonic
    } else {
        MassKind::Null
    };
    (m2, kind)
}

/// γ(s) ↦ λγ(λ⁻²s): s ↦ λ²s, γ ↦ λγ, γ̇ ↦ λ⁻¹γ̇.
pub fn apply_scaling(traj: &Trajectory, lambda: f64) -> Result<Trajectory> {
    if !(lambda > 0.0) {
        return Err(domain(format!("scale factor must be positive, got {lambda}")));
    }
    let samples = traj
        .samples
        .iter()
        .map(|p| Sample {
            s: p.s * lambda * lambda,
            gamma: p.gamma * lambda,
            gamma_dot: p.gamma_dot * (1.0 / lambda),
        })
        .collect();
    Trajectory::new(samples, traj.q)
}

/// γ(s) ↦ γ(−s): samples reversed, s ↦ −s, γ̇ ↦ −γ̇.
pub fn charge_conjugate(traj: &Trajectory) -> Trajectory {
    let samples = traj
        .samples
        .iter()
        .rev()
        .map(|p| Sample {
            s: -p.s,
            gamma: p.gamma,
            gamma_dot: -p.gamma_dot,
        })
        .collect();
    Trajectory { samples, q: traj.q }
}

/// Relative EOM defect max|γ̈_fd − qFγ̇| / max|qFγ̇|, with γ̈ from a
/// fourth-order central difference of the sampled γ̇ (uniform s steps).
pub fn eom_residual(traj: &Trajectory, field: &dyn FieldProvider) -> Result<f64> {
    let p = &traj.samples;
    if p.len() < 5 {
        return Err(domain("EOM residual needs at least five samples"));
    }
    let h = p[1].s - p[0].s;
    if p.windows(2).any(|w| ((w[1].s - w[0].s) - h).abs() > 1e-9 * h.abs()) {
        return Err(domain("EOM residual needs uniformly spaced samples"));
    }
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for i in 2..p.len() - 2 {
        let acc = (p[i - 2].gamma_dot - p[i + 2].gamma_dot + (p[i + 1].gamma_dot - p[i - 1].gamma_dot) * 8.0)
            * (1.0 / (12.0 * h));
        let rhs = lorentz_rhs(p[i].gamma, p[i].gamma_dot, field, traj.q);
        worst = worst.max((acc - rhs).max_abs());
        scale = scale.max(rhs.max_abs());
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}
