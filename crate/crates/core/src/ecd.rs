//! The ECD pair {φ, γ}: ε–𝒩 calibration, the windowed s′ integral that
//! defines φ, the free closed form, and the surfing, guiding and
//! classical-limit diagnostics.

use std::cell::RefCell;
use std::f64::consts::PI;

use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{charge_conjugate, apply_scaling, FieldSpec, GaugeFunction, PotentialProvider, Trajectory};
use crate::error::{domain, EcdError, Result};
use crate::minkowski::{AntisymTensor, FourVector};
use crate::numerics::geomspace;
use crate::propagators::{
    classical_path_bvp, semiclassical_propagator, BvpOptions, PathContribution, PropagatorKind, PropagatorSpec,
};
use crate::quadrature::{integrate_oscillatory_probes, Quadrature, QuadratureOptions};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// ε together with 𝒩 = −1/(2π²ħ̄²ε).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCalibration {
    pub epsilon: f64,
    pub n: f64,
    pub hbar: f64,
}

pub fn calibrate(epsilon: f64) -> Result<EpsilonCalibration> {
    calibrate_with_hbar(epsilon, 1.0)
}

/// With ħ̄ ≠ 1 the free propagator carries (2πħ̄)⁻², so keeping φ(γ_s) equal
/// to the ansatz needs the extra ħ̄⁻².
pub fn calibrate_with_hbar(epsilon: f64, hbar: f64) -> Result<EpsilonCalibration> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(domain(format!("calibration.epsilon must be positive, got {epsilon}")));
    }
    if !(hbar > 0.0) {
        return Err(domain(format!("hbar must be positive, got {hbar}")));
    }
    Ok(EpsilonCalibration {
        epsilon,
        n: -1.0 / (2.0 * PI * PI * hbar * hbar * epsilon),
        hbar,
    })
}

impl EpsilonCalibration {
    /// 𝒰(ε;σ) = θ(σ−ε) − θ(−σ−ε).
    pub fn window(&self, sigma: f64) -> f64 {
        if sigma > self.epsilon {
            1.0
        } else if sigma < -self.epsilon {
            -1.0
        } else {
            0.0
        }
    }

    /// Same ε with 𝒩 overridden (negative controls).
    pub fn with_n(self, n: f64) -> Self {
        Self { n, ..self }
    }

    /// ε ↦ λ²ε, 𝒩 ↦ λ⁻²𝒩.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            epsilon: self.epsilon * lambda * lambda,
            n: self.n / (lambda * lambda),
            hbar: self.hbar,
        }
    }
}

/// The particle's worldline γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Worldline {
    /// γ(s) = origin + u s.
    Uniform { origin: FourVector, u: FourVector },
    Sampled { trajectory: Trajectory },
}

impl Worldline {
    pub fn uniform(u: FourVector) -> Self {
        Worldline::Uniform {
            origin: FourVector::ZERO,
            u,
        }
    }

    /// (γ_s, γ̇_s).
    pub fn state(&self, s: f64) -> Result<(FourVector, FourVector)> {
        match self {
            Worldline::Uniform { origin, u } => Ok((*origin + *u * s, *u)),
            Worldline::Sampled { trajectory } => trajectory.interpolate(s),
        }
    }

    pub fn s_range(&self) -> Option<(f64, f64)> {
        match self {
            Worldline::Uniform { .. } => None,
            Worldline::Sampled { trajectory } => Some(trajectory.s_range()),
        }
    }

    pub fn covers(&self, a: f64, b: f64) -> Result<()> {
        match self.s_range() {
            Some((lo, hi)) if a < lo || b > hi => Err(EcdError::Coverage(format!(
                "worldline covers s ∈ [{lo}, {hi}] but [{a}, {b}] is needed"
            ))),
            _ => Ok(()),
        }
    }

    /// γ ↦ λγ(λ⁻²s).
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(domain(format!("scale factor must be positive, got {lambda}")));
        }
        Ok(match self {
            Worldline::Uniform { origin, u } => Worldline::Uniform {
                origin: *origin * lambda,
                u: *u * (1.0 / lambda),
            },
            Worldline::Sampled { trajectory } => Worldline::Sampled {
                trajectory: apply_scaling(trajectory, lambda)?,
            },
        })
    }

    /// γ ↦ γ(−s).
    pub fn conjugated(&self) -> Self {
        match self {
            Worldline::Uniform { origin, u } => Worldline::Uniform { origin: *origin, u: -*u },
            Worldline::Sampled { trajectory } => Worldline::Sampled {
                trajectory: charge_conjugate(trajectory),
            },
        }
    }

    /// All s with (x − γ_s)² = 0, ascending.
    pub fn light_cone_roots(&self, x: FourVector) -> Result<Vec<f64>> {
        match self {
            Worldline::Uniform { origin, u } => {
                let d = x - *origin;
                let (a, b, c) = (u.square(), -2.0 * u.dot(&d), d.square());
                if a == 0.0 {
                    return Ok(if b != 0.0 { vec![-c / b] } else { Vec::new() });
                }
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return Ok(Vec::new());
                }
                let qq = -0.5 * (b + b.signum() * disc.sqrt());
                let mut r = if qq == 0.0 { vec![0.0, 0.0] } else { vec![qq / a, c / qq] };
                r.sort_by(f64::total_cmp);
                Ok(r)
            }
            Worldline::Sampled { trajectory } => {
                let z = |s: f64| -> Result<f64> { Ok((x - trajectory.interpolate(s)?.0).square()) };
                let samples = trajectory.samples();
                let mut roots = Vec::new();
                for w in samples.windows(2) {
                    let (za, zb) = ((x - w[0].gamma).square(), (x - w[1].gamma).square());
                    if za == 0.0 {
                        roots.push(w[0].s);
                    } else if za * zb < 0.0 {
                        let (mut lo, mut hi, mut zlo) = (w[0].s, w[1].s, za);
                        for _ in 0..200 {
                            let mid = 0.5 * (lo + hi);
                            if mid <= lo || mid >= hi {
                                break;
                            }
                            let zm = z(mid)?;
                            if zm == 0.0 {
                                lo = mid;
                                hi = mid;
                                break;
                            }
                            if (zm < 0.0) == (zlo < 0.0) {
                                lo = mid;
                                zlo = zm;
                            } else {
                                hi = mid;
                            }
                        }
                        roots.push(0.5 * (lo + hi));
                    }
                }
                if let Some(last) = samples.last() {
                    if (x - last.gamma).square() == 0.0 {
                        roots.push(last.s);
                    }
                }
                Ok(roots)
            }
        }
    }
}

/// Cumulative action I_γ(s) = ∫ (½γ̇² + qA·γ̇) ds with its integrand, for
/// Hermite interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    pub s: Vec<f64>,
    pub action: Vec<f64>,
    pub lagrangian: Vec<f64>,
}

impl ActionTable {
    pub fn along(
        worldline: &Worldline,
        potential: &dyn PotentialProvider,
        q: f64,
        s0: f64,
        s1: f64,
        nodes: usize,
    ) -> Result<Self> {
        if nodes < 2 || !(s1 > s0) {
            return Err(domain("action table needs s1 > s0 and at least two nodes"));
        }
        worldline.covers(s0, s1)?;
        let lag = |s: f64| -> Result<f64> {
            let (g, v) = worldline.state(s)?;
            Ok(0.5 * v.square() + q * potential.potential(g).dot(&v))
        };
        let s: Vec<f64> = (0..nodes).map(|i| s0 + (s1 - s0) * i as f64 / (nodes - 1) as f64).collect();
        let lagrangian = s.iter().map(|&x| lag(x)).collect::<Result<Vec<_>>>()?;
        let mut action = vec![0.0; nodes];
        for i in 1..nodes {
            action[i] = action[i - 1] + gauss5(&lag, s[i - 1], s[i])?;
        }
        Ok(Self { s, action, lagrangian })
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        let n = self.s.len();
        if n < 2 || s < self.s[0] || s > self.s[n - 1] {
            return Err(EcdError::Coverage(format!("action table does not cover s = {s}")));
        }
        let k = self.s.partition_point(|&x| x <= s).clamp(1, n - 1) - 1;
        let h = self.s[k + 1] - self.s[k];
        let t = (s - self.s[k]) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t),
            t * (1.0 - t) * (1.0 - t),
            t * t * (3.0 - 2.0 * t),
            t * t * (t - 1.0),
        );
        Ok(h00 * self.action[k] + h10 * h * self.lagrangian[k] + h01 * self.action[k + 1] + h11 * h * self.lagrangian[k + 1])
    }

    /// I is dimensionless: I′(s) = I(λ⁻²s).
    pub fn scaled(&self, lambda: f64) -> Self {
        let l2 = lambda * lambda;
        Self {
            s: self.s.iter().map(|s| s * l2).collect(),
            action: self.action.clone(),
            lagrangian: self.lagrangian.iter().map(|l| l / l2).collect(),
        }
    }
}

fn gauss5<F: Fn(f64) -> Result<f64>>(f: &F, a: f64, b: f64) -> Result<f64> {
    const X: [f64; 3] = [0.0, 0.538_469_310_105_683_1, 0.906_179_845_938_664];
    const W: [f64; 3] = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1];
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = W[0] * f(c)?;
    for k in 1..3 {
        acc += W[k] * (f(c - h * X[k])? + f(c + h * X[k])?);
    }
    Ok(acc * h)
}

/// φ(γ_s, s) on the worldline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundaryAnsatz {
    /// C e^{i w s/2}; w = u² is the free solution.
    PlanePhase { c: Complex64, rate: f64 },
    /// C e^{iI_γ(s)/ħ̄}.
    ActionPhase { c: Complex64, table: ActionTable, hbar: f64 },
    /// Linear interpolation of tabulated values.
    Tabulated { s: Vec<f64>, values: Vec<Complex64> },
}

impl BoundaryAnsatz {
    pub fn value(&self, s: f64) -> Result<Complex64> {
        match self {
            BoundaryAnsatz::PlanePhase { c, rate } => Ok(*c * (I * (0.5 * rate * s)).exp()),
            BoundaryAnsatz::ActionPhase { c, table, hbar } => Ok(*c * (I * (table.value(s)? / hbar)).exp()),
            BoundaryAnsatz::Tabulated { s: nodes, values } => {
                let n = nodes.len();
                if n < 2 || values.len() != n || s < nodes[0] || s > nodes[n - 1] {
                    return Err(EcdError::Coverage(format!("tabulated ansatz does not cover s = {s}")));
                }
                let k = nodes.partition_point(|&x| x <= s).clamp(1, n - 1) - 1;
                let t = (s - nodes[k]) / (nodes[k + 1] - nodes[k]);
                Ok(values[k] * (1.0 - t) + values[k + 1] * t)
            }
        }
    }

    /// Multiplies the ansatz by a complex constant.
    pub fn times(&self, k: Complex64) -> Self {
        match self {
            BoundaryAnsatz::PlanePhase { c, rate } => BoundaryAnsatz::PlanePhase { c: *c * k, rate: *rate },
            BoundaryAnsatz::ActionPhase { c, table, hbar } => BoundaryAnsatz::ActionPhase {
                c: *c * k,
                table: table.clone(),
                hbar: *hbar,
            },
            BoundaryAnsatz::Tabulated { s, values } => BoundaryAnsatz::Tabulated {
                s: s.clone(),
                values: values.iter().map(|v| v * k).collect(),
            },
        }
    }

    /// φ ↦ λ⁻²φ(·, λ⁻²s) restricted to the worldline.
    pub fn scaled(&self, lambda: f64) -> Self {
        let l2 = lambda * lambda;
        match self {
            BoundaryAnsatz::PlanePhase { c, rate } => BoundaryAnsatz::PlanePhase {
                c: *c / l2,
                rate: rate / l2,
            },
            BoundaryAnsatz::ActionPhase { c, table, hbar } => BoundaryAnsatz::ActionPhase {
                c: *c / l2,
                table: table.scaled(lambda),
                hbar: *hbar,
            },
            BoundaryAnsatz::Tabulated { s, values } => BoundaryAnsatz::Tabulated {
                s: s.iter().map(|x| x * l2).collect(),
                values: values.iter().map(|v| v / l2).collect(),
            },
        }
    }
}

/// Propagator used inside the s′ integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PairPropagator {
    Closed { spec: PropagatorSpec },
    /// Semiclassical, one classical path per (x, γ_{s′}) found by shooting
    /// from the worldline velocity.
    ClassicalPaths {
        field: FieldSpec,
        q: f64,
        hbar: f64,
        steps_per_unit: f64,
        min_steps: usize,
    },
}

impl PairPropagator {
    pub fn hbar(&self) -> f64 {
        match self {
            PairPropagator::Closed { spec } => spec.hbar,
            PairPropagator::ClassicalPaths { hbar, .. } => *hbar,
        }
    }

    /// G(x, y; σ); `guess` is the initial velocity tried first by shooting.
    pub fn evaluate(&self, x: FourVector, y: FourVector, sigma: f64, guess: Option<FourVector>) -> Result<Complex64> {
        match self {
            PairPropagator::Closed { spec } => spec.evaluate(x, y, sigma),
            PairPropagator::ClassicalPaths {
                field,
                q,
                hbar,
                steps_per_unit,
                min_steps,
            } => {
                let steps = ((sigma.abs() * steps_per_unit).ceil() as usize).max(*min_steps).max(2);
                let opts = BvpOptions {
                    steps: steps + steps % 2,
                    guesses: guess.into_iter().collect(),
                    ..BvpOptions::default()
                };
                let path = classical_path_bvp(field, y, x, sigma, *q, &opts)?;
                semiclassical_propagator(
                    &[PathContribution {
                        action: path.action,
                        van_vleck: path.van_vleck,
                        phase: 0.0,
                    }],
                    sigma,
                    *hbar,
                )
            }
        }
    }

    /// The propagator in the transformed potential A ↦ λ⁻¹A(λ⁻¹x).
    pub fn scaled(&self, lambda: f64) -> Self {
        let k = lambda.powi(-2);
        match self {
            PairPropagator::Closed { spec } => PairPropagator::Closed {
                spec: PropagatorSpec {
                    kind: match spec.kind {
                        PropagatorKind::ShortS { f, q } => PropagatorKind::ShortS { f: f.scale(k), q },
                        PropagatorKind::ConstantField { f, q } => PropagatorKind::ConstantField { f: f.scale(k), q },
                        other => other,
                    },
                    hbar: spec.hbar,
                },
            },
            PairPropagator::ClassicalPaths {
                field,
                q,
                hbar,
                steps_per_unit,
                min_steps,
            } => PairPropagator::ClassicalPaths {
                field: field.scaled(lambda),
                q: *q,
                hbar: *hbar,
                steps_per_unit: steps_per_unit / (lambda * lambda),
                min_steps: *min_steps,
            },
        }
    }
}

/// Numerical settings for the s′ integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiQuadrature {
    /// Truncation |s − s′| ≤ S_max.
    pub s_max: f64,
    /// Probes per region used to place phase breakpoints.
    pub probes: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl PhiQuadrature {
    /// S_max = 10⁸ε, giving a relative truncation tail of 10⁻⁸ for the free pair.
    pub fn for_epsilon(epsilon: f64) -> Self {
        Self {
            s_max: 1e8 * epsilon,
            probes: 512,
            abs_tol: 0.0,
            rel_tol: 1e-10,
            max_panels: 20_000,
        }
    }

    fn options(&self) -> QuadratureOptions {
        QuadratureOptions {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_panels: self.max_panels,
        }
    }
}

/// The pair {φ, γ} with everything needed to evaluate φ off the worldline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdPair {
    pub worldline: Worldline,
    pub ansatz: BoundaryAnsatz,
    pub propagator: PairPropagator,
    pub calibration: EpsilonCalibration,
    /// External potential A entering D = ħ̄∂ − iqA.
    pub field: FieldSpec,
    pub q: f64,
    pub quadrature: PhiQuadrature,
}

impl EcdPair {
    /// Free pair: γ = us, φ(γ_s, s) = C e^{iu²s/2} with C = c₀/ε.
    pub fn free(u: FourVector, c0: Complex64, epsilon: f64, q: f64) -> Result<Self> {
        let calibration = calibrate(epsilon)?;
        Ok(Self {
            worldline: Worldline::uniform(u),
            ansatz: BoundaryAnsatz::PlanePhase {
                c: c0 / epsilon,
                rate: u.square(),
            },
            propagator: PairPropagator::Closed {
                spec: PropagatorSpec::free(),
            },
            calibration,
            field: FieldSpec::None,
            q,
            quadrature: PhiQuadrature::for_epsilon(epsilon),
        })
    }

    pub fn hbar(&self) -> f64 {
        self.calibration.hbar
    }

    /// Checks that ħ̄ and the field agree across components.
    pub fn validate(&self) -> Result<()> {
        let hbar = self.propagator.hbar();
        if (hbar - self.calibration.hbar).abs() > 1e-15 * hbar {
            return Err(domain("propagator and calibration disagree on hbar"));
        }
        if let BoundaryAnsatz::ActionPhase { hbar: h, .. } = &self.ansatz {
            if (h - hbar).abs() > 1e-15 * hbar {
                return Err(domain("ansatz and propagator disagree on hbar"));
            }
        }
        match &self.propagator {
            PairPropagator::Closed { spec } => match spec.kind {
                PropagatorKind::Free | PropagatorKind::DeltaPotential => {
                    if self.field != FieldSpec::None {
                        return Err(domain("free propagator used with a nonzero pair field"));
                    }
                }
                PropagatorKind::ShortS { f, q } | PropagatorKind::ConstantField { f, q } => {
                    let probe = FourVector::new(0.3, -0.7, 1.1, 0.2);
                    let pf = crate::classical::FieldProvider::field(&self.field, probe);
                    if (pf + (-f)).max_abs() > 1e-12 * (1.0 + f.max_abs()) || q != self.q {
                        return Err(domain("propagator field or charge differs from the pair's"));
                    }
                }
            },
            PairPropagator::ClassicalPaths { field, q, .. } => {
                if *field != self.field || *q != self.q {
                    return Err(domain("propagator field or charge differs from the pair's"));
                }
            }
        }
        if !(self.quadrature.s_max > self.calibration.epsilon) {
            return Err(domain("quadrature.s_max must exceed epsilon"));
        }
        Ok(())
    }
}

/// φ(x, s) with the diagnostics that go into manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiEvaluation {
    pub value: Complex64,
    pub quadrature_error: f64,
    /// Bound on the neglected |s − s′| > S_max contribution.
    pub tail_bound: f64,
    pub panels: usize,
    pub evaluations: usize,
}

/// φ(x,s) = (i/𝒩) ∫ ds′ G(x, γ_{s′}; s − s′) φ(γ_{s′}, s′) 𝒰(ε; s − s′).
///
/// Each half-line |σ| ∈ [ε, S_max] is split at √(εS_max): the inner part is
/// integrated in t = 1/|σ| (where G ~ σ⁻² is largest), the outer part in σ
/// on geometric probes, both with quarter-turn phase panels.
pub fn phi_eval(pair: &EcdPair, x: FourVector, s: f64) -> Result<PhiEvaluation> {
    let eps = pair.calibration.epsilon;
    let q = &pair.quadrature;
    let smax = q.s_max;
    if !(smax > eps) {
        return Err(domain("quadrature.s_max must exceed epsilon"));
    }
    pair.worldline.covers(s - smax, s + smax)?;
    let split = (eps * smax).sqrt();
    let opts = q.options();
    let failure: RefCell<Option<EcdError>> = RefCell::new(None);
    let mut total = Quadrature::zero();
    let mut tail = 0.0;
    for half in [1.0, -1.0] {
        let g = |tau: f64| -> Complex64 {
            let run = || -> Result<Complex64> {
                let sp = s - half * tau;
                let (y, v) = pair.worldline.state(sp)?;
                let gval = pair.propagator.evaluate(x, y, half * tau, Some(v))?;
                Ok(gval * pair.ansatz.value(sp)? * half)
            };
            match run() {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    Complex64::new(f64::NAN, f64::NAN)
                }
            }
        };
        let inner = |t: f64| g(1.0 / t) / (t * t);
        let (ta, tb) = (1.0 / split, 1.0 / eps);
        let t_probes: Vec<f64> = (0..=q.probes).map(|i| ta + (tb - ta) * i as f64 / q.probes as f64).collect();
        let near = integrate_oscillatory_probes(inner, &t_probes, &opts);
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        let far = if smax > split {
            let probes = geomspace(split, smax, q.probes + 1);
            integrate_oscillatory_probes(g, &probes, &opts)
        } else {
            Ok(Quadrature::zero())
        };
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        total = total.combine(near?).combine(far?);
        let edge = g(smax);
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        tail += edge.norm() * smax;
    }
    let pre = I / pair.calibration.n;
    Ok(PhiEvaluation {
        value: pre * total.value,
        quadrature_error: total.error / pair.calibration.n.abs(),
        tail_bound: tail / pair.calibration.n.abs(),
        panels: total.panels,
        evaluations: total.evaluations,
    })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// (−C/2π²𝒩) e^{i(u·ξ + u²s/2)} ε⁻¹ sinc(ξ²/2ε), ξ = x − us.
pub fn free_phi_closed_form(x: FourVector, s: f64, u: FourVector, c: Complex64, cal: &EpsilonCalibration) -> Complex64 {
    let xi = x - u * s;
    let k = -c / (2.0 * PI * PI * cal.n);
    k * (I * (u.dot(&xi) + 0.5 * u.square() * s)).exp() * (sinc(xi.square() / (2.0 * cal.epsilon)) / cal.epsilon)
}

/// Self-consistency of the ansatz with the integral equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub s_samples: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// Largest truncation-tail bound relative to |ansatz|.
    pub max_tail_bound: f64,
    /// Largest quadrature error estimate relative to |ansatz|.
    pub max_quadrature_error: f64,
}

/// max_s |φ(γ_s, s) − ansatz(s)| / |ansatz(s)| (absolute where |ansatz| < 1e−12).
pub fn consistency_residual(pair: &EcdPair, s_samples: &[f64]) -> Result<ConsistencyReport> {
    let rows = s_samples
        .par_iter()
        .map(|&s| -> Result<(f64, f64, f64)> {
            let (g, _) = pair.worldline.state(s)?;
            let ev = phi_eval(pair, g, s)?;
            let a = pair.ansatz.value(s)?;
            let scale = if a.norm() < 1e-12 { 1.0 } else { a.norm() };
            Ok(((ev.value - a).norm() / scale, ev.tail_bound / scale, ev.quadrature_error / scale))
        })
        .collect::<Result<Vec<_>>>()?;
    let residuals: Vec<f64> = rows.iter().map(|r| r.0).collect();
    Ok(ConsistencyReport {
        s_samples: s_samples.to_vec(),
        max_residual: residuals.iter().copied().fold(0.0, f64::max),
        residuals,
        max_tail_bound: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        max_quadrature_error: rows.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

/// Re[∂_μφ φ*] at γ by central differences of step h.
pub fn surfing_residual<F>(phi: &F, gamma: FourVector, s: f64, h: f64) -> Result<FourVector>
where
    F: Fn(FourVector, f64) -> Result<Complex64> + ?Sized,
{
    if !(h > 0.0) {
        return Err(domain("finite-difference step must be positive"));
    }
    let centre = phi(gamma, s)?.conj();
    let mut out = FourVector::ZERO;
    for mu in 0..4 {
        let mut e = FourVector::ZERO;
        e.0[mu] = h;
        let d = (phi(gamma + e, s)? - phi(gamma - e, s)?) / (2.0 * h);
        out.0[mu] = (d * centre).re;
    }
    Ok(out)
}

/// Default finite-difference step max(1e−4, √ε_mach·scale).
pub fn default_step(scale: f64) -> f64 {
    1e-4f64.max(f64::EPSILON.sqrt() * scale.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidingConfig {
    /// Finite-difference step for H and f.
    pub h: f64,
    /// Condition number at which H counts as singular.
    pub kappa_max: f64,
}

impl Default for GuidingConfig {
    fn default() -> Self {
        Self { h: 1e-4, kappa_max: 1e8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuidingState {
    pub s: f64,
    pub gamma: FourVector,
    /// Condition number of H at (γ, s); ≥ 1, infinite when H is singular.
    pub condition: f64,
    pub violent: bool,
}

/// Breakdown of the guiding equation where H becomes (numerically) singular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolentEvent {
    pub s: f64,
    pub gamma: FourVector,
    pub condition: f64,
    pub density: f64,
    pub hessian_eigenvalues: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GuidingVelocity {
    Regular { velocity: FourVector, condition: f64 },
    Violent(ViolentEvent),
}

type HessianPair = (Matrix4<f64>, nalgebra::Vector4<f64>);

fn hessian_and_forcing<F>(density: &F, gamma: FourVector, s: f64, rho0: f64, h: f64) -> Result<HessianPair>
where
    F: Fn(FourVector, f64) -> Result<f64> + ?Sized,
{
    let unit = |mu: usize, k: f64| {
        let mut e = FourVector::ZERO;
        e.0[mu] = k;
        e
    };
    let mut hess = Matrix4::zeros();
    for mu in 0..4 {
        let (p, m) = (density(gamma + unit(mu, h), s)?, density(gamma - unit(mu, h), s)?);
        hess[(mu, mu)] = (p - 2.0 * rho0 + m) / (h * h);
        for nu in mu + 1..4 {
            let pp = density(gamma + unit(mu, h) + unit(nu, h), s)?;
            let pm = density(gamma + unit(mu, h) - unit(nu, h), s)?;
            let mp = density(gamma - unit(mu, h) + unit(nu, h), s)?;
            let mm = density(gamma - unit(mu, h) - unit(nu, h), s)?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[(mu, nu)] = v;
            hess[(nu, mu)] = v;
        }
    }
    let mut f = nalgebra::Vector4::zeros();
    for mu in 0..4 {
        let pp = density(gamma + unit(mu, h), s + h)?;
        let pm = density(gamma + unit(mu, h), s - h)?;
        let mp = density(gamma - unit(mu, h), s + h)?;
        let mm = density(gamma - unit(mu, h), s - h)?;
        f[mu] = (pp - pm - mp + mm) / (4.0 * h * h);
    }
    Ok((hess, f))
}

/// γ̇ = −H⁻¹f with H_{μν} = ∂_μ∂_ν|φ|² and f_μ = ∂_s∂_μ|φ|².
pub fn guiding_velocity<F>(density: &F, gamma: FourVector, s: f64, cfg: &GuidingConfig) -> Result<GuidingVelocity>
where
    F: Fn(FourVector, f64) -> Result<f64> + ?Sized,
{
    let rho0 = density(gamma, s)?;
    let (hess, f) = hessian_and_forcing(density, gamma, s, rho0, cfg.h)?;
    if !hess.iter().all(|v| v.is_finite()) || !f.iter().all(|v| v.is_finite()) {
        return Err(EcdError::Numeric {
            s,
            detail: "non-finite Hessian or forcing in the guiding equation".into(),
        });
    }
    let eig = SymmetricEigen::new(hess).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    let mut condition = if lo > 0.0 { (hi / lo).max(1.0) } else { f64::INFINITY };
    // A critical point that is flat to second order gives an H that scales
    // with the step instead of converging; treat that as singular too.
    if condition < cfg.kappa_max {
        let (coarse, _) = hessian_and_forcing(density, gamma, s, rho0, 2.0 * cfg.h)?;
        if (coarse - hess).norm() > 0.5 * hess.norm() {
            condition = f64::INFINITY;
        }
    }
    if condition >= cfg.kappa_max {
        return Ok(GuidingVelocity::Violent(ViolentEvent {
            s,
            gamma,
            condition,
            density: rho0,
            hessian_eigenvalues: [eig[0], eig[1], eig[2], eig[3]],
        }));
    }
    let sol = hess
        .lu()
        .solve(&f)
        .ok_or_else(|| EcdError::Singular(format!("guiding Hessian not invertible at s = {s}")))?;
    Ok(GuidingVelocity::Regular {
        velocity: FourVector([-sol[0], -sol[1], -sol[2], -sol[3]]),
        condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuidingStep {
    pub state: GuidingState,
    pub event: Option<ViolentEvent>,
}

/// One RK4 step of the guiding equation. A singular H at any stage halts
/// the step and is reported as an event, not an error.
pub fn guiding_step<F>(density: &F, state: &GuidingState, cfg: &GuidingConfig, ds: f64) -> Result<GuidingStep>
where
    F: Fn(FourVector, f64) -> Result<f64> + ?Sized,
{
    let halt = |ev: ViolentEvent| GuidingStep {
        state: GuidingState {
            condition: ev.condition,
            violent: true,
            ..*state
        },
        event: Some(ev),
    };
    let (s, g) = (state.s, state.gamma);
    let mut ks = [FourVector::ZERO; 4];
    let mut first_condition = 1.0;
    let stages = [(0.0, None), (0.5, Some(0)), (0.5, Some(1)), (1.0, Some(2))];
    for (i, (c, prev)) in stages.iter().enumerate() {
        let point = match prev {
            Some(k) => g + ks[*k] * (c * ds),
            None => g,
        };
        match guiding_velocity(density, point, s + c * ds, cfg)? {
            GuidingVelocity::Regular { velocity, condition } => {
                ks[i] = velocity;
                if i == 0 {
                    first_condition = condition;
                }
            }
            GuidingVelocity::Violent(ev) => return Ok(halt(ev)),
        }
    }
    let gamma = g + (ks[0] + ks[1] * 2.0 + ks[2] * 2.0 + ks[3]) * (ds / 6.0);
    Ok(GuidingStep {
        state: GuidingState {
            s: s + ds,
            gamma,
            condition: first_condition,
            violent: false,
        },
        event: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuidingRun {
    pub states: Vec<GuidingState>,
    pub event: Option<ViolentEvent>,
}

/// Integrates the guiding equation for `steps` steps or until a violent event.
pub fn integrate_guiding<F>(
    density: &F,
    gamma0: FourVector,
    s0: f64,
    ds: f64,
    steps: usize,
    cfg: &GuidingConfig,
) -> Result<GuidingRun>
where
    F: Fn(FourVector, f64) -> Result<f64> + ?Sized,
{
    let mut state = GuidingState {
        s: s0,
        gamma: gamma0,
        condition: 1.0,
        violent: false,
    };
    let mut states = vec![state];
    for _ in 0..steps {
        let step = guiding_step(density, &state, cfg, ds)?;
        if let Some(ev) = step.event {
            if let Some(last) = states.last_mut() {
                *last = step.state;
            }
            return Ok(GuidingRun { states, event: Some(ev) });
        }
        // the step reports the condition number at its start point
        if let Some(prev) = states.last_mut() {
            prev.condition = step.state.condition;
        }
        state = step.state;
        states.push(state);
    }
    Ok(GuidingRun { states, event: None })
}

/// How closely ∂_μφ(γ_s) = iħ̄⁻¹p_μφ(γ_s) holds along the worldline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseGradientReport {
    pub s_samples: Vec<f64>,
    /// max_μ|∂_μφ − iħ̄⁻¹p_μφ| / (max_μ|p_μ| |φ|/ħ̄).
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// max_μ|∂_μφ − iħ̄⁻¹p_μφ| / |φ|, without the momentum scale.
    pub max_absolute_residual: f64,
    /// Velocity recovered from ħ̄ Im(∂φ/φ) − qA against γ̇, relative.
    pub max_velocity_error: f64,
    pub step: f64,
}

/// Compton-to-field length ratio λ_e/λ_F = ħ̄/(m λ_F).
pub fn compton_ratio(pair: &EcdPair, s: f64) -> Result<Option<f64>> {
    let (_, v) = pair.worldline.state(s)?;
    let m2 = v.square();
    if !(m2 > 0.0) {
        return Err(domain("compton ratio needs a timelike worldline"));
    }
    Ok(crate::classical::FieldProvider::variation_scale(&pair.field).map(|l| pair.hbar() / (m2.sqrt() * l)))
}

pub fn classical_phase_gradient_check(pair: &EcdPair, s_samples: &[f64], h: f64) -> Result<PhaseGradientReport> {
    if !(h > 0.0) {
        return Err(domain("finite-difference step must be positive"));
    }
    let hbar = pair.hbar();
    let mut residuals = Vec::new();
    let (mut worst_abs, mut worst_vel) = (0.0f64, 0.0f64);
    for &s in s_samples {
        let (g, v) = pair.worldline.state(s)?;
        let mut points = vec![g];
        for mu in 0..4 {
            let mut e = FourVector::ZERO;
            e.0[mu] = h;
            points.extend([g + e, g - e, g + e * 2.0, g - e * 2.0]);
        }
        let vals = points
            .par_iter()
            .map(|&x| phi_eval(pair, x, s).map(|e| e.value))
            .collect::<Result<Vec<_>>>()?;
        let phi0 = vals[0];
        let a = pair.field.potential(g);
        let p = (v + a * pair.q).lower();
        let mut diff = 0.0f64;
        let mut p_rec = FourVector::ZERO;
        for mu in 0..4 {
            let k = 1 + 4 * mu;
            // fourth-order stencil: the phase winds at p/ħ̄, so the error of
            // a second-order one grows like (ph/ħ̄)² as ħ̄ shrinks
            let d = (8.0 * (vals[k] - vals[k + 1]) - (vals[k + 2] - vals[k + 3])) / (12.0 * h);
            diff = diff.max((d - I * (p.0[mu] / hbar) * phi0).norm());
            p_rec.0[mu] = hbar * (d / phi0).im;
        }
        let v_rec = p_rec.lower() - a * pair.q;
        worst_vel = worst_vel.max((v_rec - v).max_abs() / v.max_abs());
        worst_abs = worst_abs.max(diff / phi0.norm());
        residuals.push(diff * hbar / (p.max_abs() * phi0.norm()));
    }
    Ok(PhaseGradientReport {
        s_samples: s_samples.to_vec(),
        max_residual: residuals.iter().copied().fold(0.0, f64::max),
        residuals,
        max_absolute_residual: worst_abs,
        max_velocity_error: worst_vel,
        step: h,
    })
}

/// φ ↦ λ⁻²φ(λ⁻¹x, λ⁻²s), γ ↦ λγ(λ⁻²s), A ↦ λ⁻¹A(λ⁻¹x), ε ↦ λ²ε.
pub fn scale_transform_pair(pair: &EcdPair, lambda: f64) -> Result<EcdPair> {
    if !(lambda > 0.0) {
        return Err(domain(format!("scale factor must be positive, got {lambda}")));
    }
    if lambda == 1.0 {
        return Ok(pair.clone());
    }
    let l2 = lambda * lambda;
    Ok(EcdPair {
        worldline: pair.worldline.scaled(lambda)?,
        ansatz: pair.ansatz.scaled(lambda),
        propagator: pair.propagator.scaled(lambda),
        calibration: pair.calibration.scaled(lambda),
        field: pair.field.scaled(lambda),
        q: pair.q,
        quadrature: PhiQuadrature {
            s_max: pair.quadrature.s_max * l2,
            ..pair.quadrature
        },
    })
}

/// Anything that supplies φ(x, s) together with the data its currents need.
pub trait PhiSource: Sync {
    fn phi(&self, x: FourVector, s: f64) -> Result<Complex64>;
    fn hbar(&self) -> f64;
    fn charge(&self) -> f64;
    /// A^μ(x) entering D.
    fn potential_at(&self, x: FourVector) -> FourVector;
    fn worldline(&self) -> &Worldline;
    fn calibration(&self) -> EpsilonCalibration;
}

impl PhiSource for EcdPair {
    fn phi(&self, x: FourVector, s: f64) -> Result<Complex64> {
        Ok(phi_eval(self, x, s)?.value)
    }
    fn hbar(&self) -> f64 {
        self.calibration.hbar
    }
    fn charge(&self) -> f64 {
        self.q
    }
    fn potential_at(&self, x: FourVector) -> FourVector {
        self.field.potential(x)
    }
    fn worldline(&self) -> &Worldline {
        &self.worldline
    }
    fn calibration(&self) -> EpsilonCalibration {
        self.calibration
    }
}

/// The free solution in closed form (A = 0, ħ̄ = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeClosedForm {
    pub worldline: Worldline,
    pub u: FourVector,
    pub origin: FourVector,
    /// C, already including the 1/ε of C = c₀/ε.
    pub c: Complex64,
    pub calibration: EpsilonCalibration,
    pub q: f64,
}

impl FreeClosedForm {
    pub fn new(u: FourVector, c0: Complex64, epsilon: f64, q: f64) -> Result<Self> {
        Self::with_origin(FourVector::ZERO, u, c0, epsilon, q)
    }

    pub fn with_origin(origin: FourVector, u: FourVector, c0: Complex64, epsilon: f64, q: f64) -> Result<Self> {
        if !(u.square() > 0.0) {
            return Err(domain("free solution needs a timelike u"));
        }
        Ok(Self {
            worldline: Worldline::Uniform { origin, u },
            u,
            origin,
            c: c0 / epsilon,
            calibration: calibrate(epsilon)?,
            q,
        })
    }

    /// K = −C/(2π²𝒩), the amplitude multiplying ε⁻¹sinc.
    pub fn amplitude(&self) -> Complex64 {
        -self.c / (2.0 * PI * PI * self.calibration.n)
    }
}

impl PhiSource for FreeClosedForm {
    fn phi(&self, x: FourVector, s: f64) -> Result<Complex64> {
        Ok(free_phi_closed_form(x - self.origin, s, self.u, self.c, &self.calibration))
    }
    fn hbar(&self) -> f64 {
        1.0
    }
    fn charge(&self) -> f64 {
        self.q
    }
    fn potential_at(&self, _: FourVector) -> FourVector {
        FourVector::ZERO
    }
    fn worldline(&self) -> &Worldline {
        &self.worldline
    }
    fn calibration(&self) -> EpsilonCalibration {
        self.calibration
    }
}

/// Charge conjugate: φ*(x, −s), γ(−s), −A.
pub struct Conjugated<'a> {
    inner: &'a dyn PhiSource,
    worldline: Worldline,
}

impl<'a> Conjugated<'a> {
    pub fn new(inner: &'a dyn PhiSource) -> Self {
        Self {
            inner,
            worldline: inner.worldline().conjugated(),
        }
    }
}

impl PhiSource for Conjugated<'_> {
    fn phi(&self, x: FourVector, s: f64) -> Result<Complex64> {
        Ok(self.inner.phi(x, -s)?.conj())
    }
    fn hbar(&self) -> f64 {
        self.inner.hbar()
    }
    fn charge(&self) -> f64 {
        self.inner.charge()
    }
    fn potential_at(&self, x: FourVector) -> FourVector {
        -self.inner.potential_at(x)
    }
    fn worldline(&self) -> &Worldline {
        &self.worldline
    }
    fn calibration(&self) -> EpsilonCalibration {
        self.inner.calibration()
    }
}

/// Gauge transform: φ e^{iqα/ħ̄}, A + ∂α.
pub struct GaugeShifted<'a> {
    pub inner: &'a dyn PhiSource,
    pub alpha: GaugeFunction,
}

impl PhiSource for GaugeShifted<'_> {
    fn phi(&self, x: FourVector, s: f64) -> Result<Complex64> {
        let phase = self.inner.charge() * self.alpha.value(x) / self.inner.hbar();
        Ok(self.inner.phi(x, s)? * (I * phase).exp())
    }
    fn hbar(&self) -> f64 {
        self.inner.hbar()
    }
    fn charge(&self) -> f64 {
        self.inner.charge()
    }
    fn potential_at(&self, x: FourVector) -> FourVector {
        self.inner.potential_at(x) + self.alpha.gradient(x)
    }
    fn worldline(&self) -> &Worldline {
        self.inner.worldline()
    }
    fn calibration(&self) -> EpsilonCalibration {
        self.inner.calibration()
    }
}

/// Scale image: λ⁻²φ(λ⁻¹x, λ⁻²s), λ⁻¹A(λ⁻¹x), ε ↦ λ²ε.
pub struct Rescaled<'a> {
    inner: &'a dyn PhiSource,
    lambda: f64,
    worldline: Worldline,
}

impl<'a> Rescaled<'a> {
    pub fn new(inner: &'a dyn PhiSource, lambda: f64) -> Result<Self> {
        Ok(Self {
            inner,
            lambda,
            worldline: inner.worldline().scaled(lambda)?,
        })
    }
}

impl PhiSource for Rescaled<'_> {
    fn phi(&self, x: FourVector, s: f64) -> Result<Complex64> {
        let l = self.lambda;
        Ok(self.inner.phi(x * (1.0 / l), s / (l * l))? / (l * l))
    }
    fn hbar(&self) -> f64 {
        self.inner.hbar()
    }
    fn charge(&self) -> f64 {
        self.inner.charge()
    }
    fn potential_at(&self, x: FourVector) -> FourVector {
        self.inner.potential_at(x * (1.0 / self.lambda)) * (1.0 / self.lambda)
    }
    fn worldline(&self) -> &Worldline {
        &self.worldline
    }
    fn calibration(&self) -> EpsilonCalibration {
        self.inner.calibration().scaled(self.lambda)
    }
}

/// Field tensor of a pair's potential, for callers that need F.
pub fn pair_field_tensor(pair: &EcdPair, x: FourVector) -> AntisymTensor {
    crate::classical::FieldProvider::field(&pair.field, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rest() -> FourVector {
        FourVector::new(1.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn calibration_values() {
        let c = calibrate(1e-3).unwrap();
        assert_abs_diff_eq!(c.n, -50.660_591_821_168_89, epsilon = 1e-9);
        assert_abs_diff_eq!(c.n * c.epsilon, -1.0 / (2.0 * PI * PI), epsilon = 1e-18);
        let c = calibrate(1.0 / (2.0 * PI * PI)).unwrap();
        assert_abs_diff_eq!(c.n, -1.0, epsilon = 1e-14);
        assert!(calibrate(0.0).is_err());
        assert!(calibrate(-1.0).unwrap_err().to_string().contains("calibration.epsilon must be positive"));
        let a = calibrate(2e-3).unwrap();
        let b = calibrate(2e-3 * 9.0).unwrap();
        assert_abs_diff_eq!(b.n / a.n, 1.0 / 9.0, epsilon = 1e-15);
        assert_eq!(a.window(3e-3), 1.0);
        assert_eq!(a.window(-3e-3), -1.0);
        assert_eq!(a.window(1e-3), 0.0);
    }

    #[test]
    fn uniform_light_cone_roots() {
        let w = Worldline::uniform(rest());
        let r = w.light_cone_roots(FourVector::new(0.5, 0.3, 0.0, 0.4)).unwrap();
        assert_eq!(r.len(), 2);
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_on_trajectory_is_the_ansatz() {
        let cal = calibrate(1e-2).unwrap();
        let u = FourVector::new(1.25, 0.75, 0.0, 0.0);
        let c = Complex64::new(0.3, -0.2) / cal.epsilon;
        for s in [-1.0, 0.0, 2.5] {
            let v = free_phi_closed_form(u * s, s, u, c, &cal);
            let a = c * (I * (0.5 * u.square() * s)).exp();
            assert!((v - a).norm() < 1e-13 * a.norm());
        }
    }

    #[test]
    fn phi_eval_reproduces_closed_form() {
        let pair = EcdPair::free(rest(), Complex64::new(1.0, 0.0), 1e-2, 1.0).unwrap();
        let ev = phi_eval(&pair, FourVector::new(0.7, 0.0, 0.0, 0.0), 0.7).unwrap();
        let exact = pair.ansatz.value(0.7).unwrap();
        assert!((ev.value - exact).norm() < 1e-6 * exact.norm(), "{:?} vs {exact}", ev.value);
        assert!(ev.tail_bound < 1e-6 * exact.norm());
        let off = FourVector::new(0.2, 0.25, 0.1, 0.0);
        let ev = phi_eval(&pair, off, 0.1).unwrap();
        let cf = free_phi_closed_form(off, 0.1, rest(), Complex64::new(100.0, 0.0), &pair.calibration);
        assert!((ev.value - cf).norm() < 1e-3 * cf.norm(), "{:?} vs {cf}", ev.value);
    }

    #[test]
    fn phi_eval_is_linear_in_the_ansatz() {
        let pair = EcdPair::free(rest(), Complex64::new(1.0, 0.0), 1e-2, 1.0).unwrap();
        let k = Complex64::new(0.5, 2.0);
        let scaled = EcdPair {
            ansatz: pair.ansatz.times(k),
            ..pair.clone()
        };
        let x = FourVector::new(0.3, 0.1, 0.0, 0.2);
        let a = phi_eval(&pair, x, 0.2).unwrap().value * k;
        let b = phi_eval(&scaled, x, 0.2).unwrap().value;
        assert!((a - b).norm() < 1e-13 * a.norm());
    }

    #[test]
    fn wrong_normalization_is_order_one() {
        let mut pair = EcdPair::free(rest(), Complex64::new(1.0, 0.0), 1e-2, 1.0).unwrap();
        pair.calibration = pair.calibration.with_n(2.0 * pair.calibration.n);
        let r = consistency_residual(&pair, &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r.max_residual, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn gaussian_guiding_follows_the_trajectory() {
        let u = FourVector::new(1.0, 0.3, 0.0, -0.2);
        let m = Matrix4::new(
            2.0, 0.3, 0.0, 0.1, 0.3, 1.5, 0.2, 0.0, 0.0, 0.2, 1.0, 0.0, 0.1, 0.0, 0.0, 1.2,
        );
        let density = move |x: FourVector, s: f64| -> Result<f64> {
            let xi = x - u * s;
            let v = nalgebra::Vector4::from_column_slice(&xi.0);
            Ok((-(v.transpose() * m * v)[0]).exp())
        };
        let cfg = GuidingConfig { h: 1e-4, kappa_max: 1e8 };
        let run = integrate_guiding(&density, FourVector::ZERO, 0.0, 0.1, 10, &cfg).unwrap();
        assert!(run.event.is_none());
        let last = run.states.last().unwrap();
        assert!((last.gamma - u * last.s).max_abs() < 1e-6, "{:?}", last.gamma - u * last.s);
    }

    #[test]
    fn static_density_gives_zero_velocity() {
        let density = |x: FourVector, _s: f64| -> Result<f64> { Ok((-(x.0.iter().map(|v| v * v).sum::<f64>())).exp()) };
        match guiding_velocity(&density, FourVector::ZERO, 0.3, &GuidingConfig::default()).unwrap() {
            GuidingVelocity::Regular { velocity, .. } => assert!(velocity.max_abs() < 1e-8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn free_density_is_violent_on_the_trajectory() {
        let free = FreeClosedForm::new(rest(), Complex64::new(1.0, 0.0), 1e-2, 1.0).unwrap();
        let density = |x: FourVector, s: f64| free.phi(x, s).map(|p| p.norm_sqr());
        let v = guiding_velocity(&density, FourVector::new(0.5, 0.0, 0.0, 0.0), 0.5, &GuidingConfig::default()).unwrap();
        assert!(matches!(v, GuidingVelocity::Violent(ev) if ev.condition >= 1e8), "{v:?}");
    }

    #[test]
    fn scale_transform_identity_and_free_covariance() {
        let pair = EcdPair::free(rest(), Complex64::new(1.0, 0.5), 1e-2, 1.0).unwrap();
        assert_eq!(scale_transform_pair(&pair, 1.0).unwrap(), pair);
        let scaled = scale_transform_pair(&pair, 2.0).unwrap();
        let x = FourVector::new(0.3, 0.1, 0.0, 0.0);
        let a = phi_eval(&pair, x, 0.2).unwrap().value / 4.0;
        let b = phi_eval(&scaled, x * 2.0, 0.8).unwrap().value;
        assert!((a - b).norm() < 1e-9 * a.norm(), "{a} {b}");
    }

    #[test]
    fn action_table_interpolates_free_action() {
        let w = Worldline::uniform(FourVector::new(1.25, 0.75, 0.0, 0.0));
        let t = ActionTable::along(&w, &FieldSpec::None, 1.0, -2.0, 2.0, 21).unwrap();
        assert_abs_diff_eq!(t.value(1.37).unwrap() - t.value(-0.5).unwrap(), 0.5 * 1.87, epsilon = 1e-13);
    }
}
