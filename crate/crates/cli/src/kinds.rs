//! Scenario kinds: typed parameter blocks and their runners.
//!
//! CSV column contracts (one header row, then data):
//!
//! | kind | file | columns |
//! |---|---|---|
//! | classical-orbit | trajectory.csv | s, gamma0..3, gamma_dot0..3, drift |
//! | lw-field-map | field_map.csv | t, x, y, z, e1..3, b1..3, theta_trace, theta_asymmetry |
//! | conservation-audit | current.csv | t, x, y, z, j0..3 |
//! | conservation-audit | slices.csv | t, charge |
//! | free-ecd | consistency.csv | s, residual[, control_residual] |
//! | guiding-run | guiding.csv | s, gamma0..3, condition, violent |
//! | classical-limit-sweep | phase_gradient.csv | hbar, compton_ratio, s, residual |
//! | current-regularization | profile.csv | r, j0, j_div0, finite0 |
//! | current-regularization | remainder.csv | rho, remainder, amplitude, smooth |

use std::f64::consts::PI;
use std::path::Path;

use ecd_core::classical::{
    effective_mass, integrate_worldline, FieldSpec, IntegratorConfig, IntegratorMethod, Trajectory,
};
use ecd_core::currents::{
    continuity_residual, ecd_electric_current, fit_profile_remainder, free_charge_j0, j_div_coefficient,
    light_cone_current, AuditReport, CurrentQuadrature, FreeProfile, LightConeWeight,
};
use ecd_core::ecd::{
    classical_phase_gradient_check, compton_ratio, consistency_residual, integrate_guiding, ActionTable,
    BoundaryAnsatz, EcdPair, FreeClosedForm, GuidingConfig, PairPropagator, PhiQuadrature, PhiSource, Worldline,
};
use ecd_core::minkowski::EventGrid;
use ecd_core::numerics::{geomspace, loglog_fit};
use ecd_core::sources::{asymmetry, deposit_electric_current, lw_field, stress_tensor, trace, DepositKernel};
use ecd_core::{CurrentField, EcdError, FourVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Checker, Params, ScenarioParams};
use crate::report::{write_table, Check, KindReport};
use crate::LabError;

// ---------------------------------------------------------------------------
// shared sections

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Particle {
    pub q: f64,
    pub position: [f64; 4],
    pub velocity: [f64; 4],
}

impl Particle {
    fn check(&self, c: &mut Checker, path: &str) {
        c.finite(&format!("{path}.q"), &[self.q]);
        c.finite(&format!("{path}.position"), &self.position);
        c.finite(&format!("{path}.velocity"), &self.velocity);
    }

    fn initial(&self) -> (FourVector, FourVector) {
        (FourVector(self.position), FourVector(self.velocity))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Field {
    #[default]
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
}

impl Field {
    fn spec(&self) -> FieldSpec {
        match *self {
            Field::None => FieldSpec::None,
            Field::Constant { e, b } => FieldSpec::Constant { e, b },
            Field::Standing { amplitude, length } => FieldSpec::Standing { amplitude, length },
        }
    }

    fn check(&self, c: &mut Checker) {
        match self {
            Field::None => {}
            Field::Constant { e, b } => {
                c.finite("field.e", e);
                c.finite("field.b", b);
            }
            Field::Standing { amplitude, length } => {
                c.finite("field.amplitude", &[*amplitude]);
                c.positive("field.length", *length);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Integration {
    pub s_span: [f64; 2],
    pub step: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub method: Option<IntegratorMethod>,
}

impl Integration {
    fn check(&self, c: &mut Checker) {
        c.finite("integration.s_span", &self.s_span);
        c.require(self.s_span[1] > self.s_span[0], "integration.s_span", "must be increasing");
        c.positive("integration.step", self.step);
        c.positive("integration.tolerance", self.tolerance);
    }

    fn config(&self) -> IntegratorConfig {
        IntegratorConfig {
            method: self.method.unwrap_or(IntegratorMethod::Rk4),
            step: self.step,
            tolerance: self.tolerance,
        }
    }

    fn trajectory(&self, particle: &Particle, field: &FieldSpec) -> Result<Trajectory, EcdError> {
        let span = (self.s_span[0], self.s_span[1]);
        integrate_worldline(particle.initial(), field, particle.q, span, &self.config())
    }
}

/// Grid centred in space on `centre`, with time starting at `t0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub t0: f64,
    pub centre: [f64; 3],
    pub spacings: [f64; 4],
    pub extents: [usize; 4],
}

impl Grid {
    fn check(&self, c: &mut Checker) {
        c.finite("grid.t0", &[self.t0]);
        c.finite("grid.centre", &self.centre);
        for (a, h) in self.spacings.iter().enumerate() {
            c.positive(&format!("grid.spacings[{a}]"), *h);
        }
        c.require(self.extents.iter().all(|n| *n > 0), "grid.extents", "must be nonzero");
    }

    fn event_grid(&self) -> Result<EventGrid, EcdError> {
        EventGrid::centred(self.t0, self.centre, self.spacings, self.extents)
    }
}

fn unit_amplitude() -> [f64; 2] {
    [1.0, 0.0]
}

fn unit_charge() -> f64 {
    1.0
}

/// A free ECD pair γ = us with boundary amplitude c₀.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair {
    pub velocity: [f64; 4],
    #[serde(default = "unit_amplitude")]
    pub amplitude: [f64; 2],
    #[serde(default = "unit_charge")]
    pub charge: f64,
}

impl Pair {
    fn check(&self, c: &mut Checker) {
        c.finite("pair.velocity", &self.velocity);
        c.finite("pair.amplitude", &self.amplitude);
        c.finite("pair.charge", &[self.charge]);
        c.require(FourVector(self.velocity).square() > 0.0, "pair.velocity", "must be timelike");
    }

    fn c0(&self) -> Complex64 {
        Complex64::new(self.amplitude[0], self.amplitude[1])
    }

    fn closed_form(&self, epsilon: f64) -> Result<FreeClosedForm, EcdError> {
        FreeClosedForm::new(FourVector(self.velocity), self.c0(), epsilon, self.charge)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub epsilon: f64,
}

impl Calibration {
    fn check(&self, c: &mut Checker) {
        c.positive("calibration.epsilon", self.epsilon);
    }
}

/// Overrides for the s-quadrature behind sampled ECD currents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentQuadratureSection {
    pub s_half_width: f64,
    #[serde(default)]
    pub probes: Option<usize>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
}

impl CurrentQuadratureSection {
    fn check(&self, c: &mut Checker) {
        c.positive("quadrature.s_half_width", self.s_half_width);
        if let Some(p) = self.probes {
            c.require(p >= 2, "quadrature.probes", "must be at least 2");
        }
        if let Some(t) = self.rel_tol {
            c.positive("quadrature.rel_tol", t);
        }
    }

    fn build(&self, src: &FreeClosedForm) -> CurrentQuadrature {
        let mut q = CurrentQuadrature::for_calibration(&src.calibration, self.s_half_width);
        if let Some(p) = self.probes {
            q.probes = p;
        }
        if let Some(t) = self.rel_tol {
            q.rel_tol = t;
        }
        q
    }
}

fn numeric<T>(r: Result<T, EcdError>) -> Result<T, LabError> {
    r.map_err(LabError::from)
}

// ---------------------------------------------------------------------------
// classical-orbit

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalOrbit {
    pub particle: Particle,
    #[serde(default)]
    pub field: Field,
    pub integration: Integration,
}

impl Params for ClassicalOrbit {
    fn check(&self, c: &mut Checker) {
        self.particle.check(c, "particle");
        self.field.check(c);
        self.integration.check(c);
    }
}

fn trajectory_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    let m0 = traj.samples()[0].gamma_dot.square();
    traj.samples()
        .iter()
        .map(|p| {
            let mut row = vec![p.s];
            row.extend(p.gamma.0);
            row.extend(p.gamma_dot.0);
            row.push(p.gamma_dot.square() - m0);
            row
        })
        .collect()
}

fn run_classical_orbit(p: &ClassicalOrbit, dir: &Path) -> Result<KindReport, LabError> {
    let traj = numeric(p.integration.trajectory(&p.particle, &p.field.spec()))?;
    let mut rep = KindReport::default();
    rep.tolerance("integration.tolerance", p.integration.tolerance);
    rep.tolerance("integration.step", p.integration.step);
    rep.outputs.push(write_table(
        dir,
        "trajectory.csv",
        &[
            "s", "gamma0", "gamma1", "gamma2", "gamma3", "gamma_dot0", "gamma_dot1", "gamma_dot2", "gamma_dot3", "drift",
        ],
        &trajectory_rows(&traj),
    )?);
    let (m, kind) = effective_mass(&traj);
    rep.diagnostic("effective_mass", m);
    rep.diagnostic("mass_kind", kind);
    rep.checks.push(Check::at_most(
        "gamma_dot_sq_drift",
        traj.gamma_dot_sq_drift(),
        p.integration.tolerance,
    ));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// lw-field-map

fn default_lw_step() -> f64 {
    1e-5
}

fn default_stress_tolerance() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LwOptions {
    /// Finite-difference step for F = ∂A.
    #[serde(default = "default_lw_step")]
    pub h: f64,
    /// Relative tolerance for the trace and asymmetry of Θ.
    #[serde(default = "default_stress_tolerance")]
    pub tolerance: f64,
}

impl Default for LwOptions {
    fn default() -> Self {
        Self {
            h: default_lw_step(),
            tolerance: default_stress_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LwFieldMap {
    pub particle: Particle,
    #[serde(default)]
    pub field: Field,
    pub integration: Integration,
    pub grid: Grid,
    #[serde(default)]
    pub lw: LwOptions,
}

impl Params for LwFieldMap {
    fn check(&self, c: &mut Checker) {
        self.particle.check(c, "particle");
        self.field.check(c);
        self.integration.check(c);
        self.grid.check(c);
        c.positive("lw.h", self.lw.h);
        c.positive("lw.tolerance", self.lw.tolerance);
    }
}

fn run_lw_field_map(p: &LwFieldMap, dir: &Path) -> Result<KindReport, LabError> {
    let traj = numeric(p.integration.trajectory(&p.particle, &p.field.spec()))?;
    let grid = numeric(p.grid.event_grid())?;
    let rows = grid
        .map_points(|x| -> Result<(Vec<f64>, f64, f64), EcdError> {
            let f = lw_field(x, &traj, p.lw.h)?;
            let theta = stress_tensor(&f);
            let scale = theta.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let (tr, asym) = (trace(&theta), asymmetry(&theta));
            let mut row = x.0.to_vec();
            row.extend(f.electric());
            row.extend(f.magnetic());
            row.extend([tr, asym]);
            let rel = |v: f64| if scale > 0.0 { v.abs() / scale } else { 0.0 };
            Ok((row, rel(tr), rel(asym)))
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>();
    let rows = numeric(rows)?;
    let mut rep = KindReport::default();
    rep.tolerance("lw.h", p.lw.h);
    rep.tolerance("lw.tolerance", p.lw.tolerance);
    rep.tolerance("integration.tolerance", p.integration.tolerance);
    let worst_trace = rows.iter().fold(0.0f64, |m, r| m.max(r.1));
    let worst_asym = rows.iter().fold(0.0f64, |m, r| m.max(r.2));
    let table: Vec<Vec<f64>> = rows.into_iter().map(|r| r.0).collect();
    rep.outputs.push(write_table(
        dir,
        "field_map.csv",
        &[
            "t", "x", "y", "z", "e1", "e2", "e3", "b1", "b2", "b3", "theta_trace", "theta_asymmetry",
        ],
        &table,
    )?);
    rep.checks.push(Check::at_most("theta_relative_trace", worst_trace, p.lw.tolerance));
    rep.checks.push(Check::at_most("theta_relative_asymmetry", worst_asym, p.lw.tolerance));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// conservation-audit

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditSource {
    /// Deposited point charge on an integrated worldline.
    Classical,
    /// Sampled current of the free ECD pair.
    FreeEcd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditOptions {
    #[serde(default)]
    pub kernel: DepositKernel,
    /// Slice-charge spread (classical) or relative divergence (free-ecd).
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConservationAudit {
    pub source: AuditSource,
    pub grid: Grid,
    pub audit: AuditOptions,
    #[serde(default)]
    pub particle: Option<Particle>,
    #[serde(default)]
    pub field: Option<Field>,
    #[serde(default)]
    pub integration: Option<Integration>,
    #[serde(default)]
    pub pair: Option<Pair>,
    #[serde(default)]
    pub calibration: Option<Calibration>,
    #[serde(default)]
    pub quadrature: Option<CurrentQuadratureSection>,
}

impl Params for ConservationAudit {
    fn check(&self, c: &mut Checker) {
        self.grid.check(c);
        c.positive("audit.tolerance", self.audit.tolerance);
        c.require(self.grid.extents.iter().all(|n| *n >= 3), "grid.extents", "must be at least 3 on every axis");
        match self.source {
            AuditSource::Classical => {
                let why = "source = \"classical\"";
                match &self.particle {
                    Some(p) => p.check(c, "particle"),
                    None => c.missing("particle", why),
                }
                match &self.integration {
                    Some(i) => i.check(c),
                    None => c.missing("integration", why),
                }
                if let Some(f) = &self.field {
                    f.check(c);
                }
            }
            AuditSource::FreeEcd => {
                let why = "source = \"free-ecd\"";
                match &self.pair {
                    Some(p) => p.check(c),
                    None => c.missing("pair", why),
                }
                match &self.calibration {
                    Some(cal) => cal.check(c),
                    None => c.missing("calibration", why),
                }
                match &self.quadrature {
                    Some(q) => q.check(c),
                    None => c.missing("quadrature", why),
                }
            }
        }
    }
}

fn current_rows(j: &CurrentField) -> Vec<Vec<f64>> {
    (0..j.grid.len())
        .map(|lin| {
            let mut row = j.grid.point_linear(lin).0.to_vec();
            row.extend(j.values[lin].0);
            row
        })
        .collect()
}

fn audit_outputs(rep: &mut KindReport, dir: &Path, j: &CurrentField, audit: &AuditReport) -> Result<(), LabError> {
    rep.outputs.push(write_table(
        dir,
        "current.csv",
        &["t", "x", "y", "z", "j0", "j1", "j2", "j3"],
        &current_rows(j),
    )?);
    let slices: Vec<Vec<f64>> = audit
        .slice_times
        .iter()
        .zip(&audit.slice_charges)
        .map(|(t, q)| vec![*t, *q])
        .collect();
    rep.outputs.push(write_table(dir, "slices.csv", &["t", "charge"], &slices)?);
    rep.diagnostic("interior_divergence_max", audit.interior_divergence_max);
    rep.diagnostic("divergence_scale", audit.divergence_scale);
    Ok(())
}

fn run_conservation_audit(p: &ConservationAudit, dir: &Path) -> Result<KindReport, LabError> {
    let grid = numeric(p.grid.event_grid())?;
    let mut rep = KindReport::default();
    rep.tolerance("audit.tolerance", p.audit.tolerance);
    match p.source {
        AuditSource::Classical => {
            let (Some(particle), Some(integration)) = (&p.particle, &p.integration) else {
                unreachable!("validated");
            };
            let field = p.field.clone().unwrap_or_default().spec();
            let traj = numeric(integration.trajectory(particle, &field))?;
            let j = numeric(deposit_electric_current(&traj, &grid, p.audit.kernel))?;
            let audit = numeric(continuity_residual(&j))?;
            audit_outputs(&mut rep, dir, &j, &audit)?;
            rep.tolerance("integration.tolerance", integration.tolerance);
            rep.checks.push(Check::at_most("slice_charge_spread", audit.charge_spread, p.audit.tolerance));
        }
        AuditSource::FreeEcd => {
            let (Some(pair), Some(cal), Some(qs)) = (&p.pair, &p.calibration, &p.quadrature) else {
                unreachable!("validated");
            };
            let src = numeric(pair.closed_form(cal.epsilon))?;
            let quad = qs.build(&src);
            let sampled = numeric(ecd_electric_current(&src, &grid, &quad))?;
            let audit = numeric(continuity_residual(&sampled.current))?;
            audit_outputs(&mut rep, dir, &sampled.current, &audit)?;
            rep.tolerance("quadrature.rel_tol", quad.rel_tol);
            rep.tolerance("quadrature.s_half_width", quad.s_half_width);
            rep.tolerance("quadrature.max_tail_bound", sampled.max_tail_bound);
            rep.tolerance("quadrature.max_error", sampled.max_quadrature_error);
            rep.diagnostic("quadrature_evaluations", sampled.evaluations);
            rep.checks.push(Check::at_most(
                "relative_divergence",
                audit.relative_divergence,
                p.audit.tolerance,
            ));
            rep.checks.push(Check::at_most("slice_charge_spread", audit.charge_spread, p.audit.tolerance).informational());
        }
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// free-ecd

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Consistency {
    pub s_samples: Vec<f64>,
    /// Residual bound for the ansatz.
    pub tolerance: f64,
    #[serde(default)]
    pub s_max: Option<f64>,
    #[serde(default)]
    pub probes: Option<usize>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegativeControl {
    /// 𝒩 is multiplied by this factor.
    pub n_factor: f64,
    /// The detuned run must miss by at least this much.
    pub min_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeEcd {
    pub pair: Pair,
    pub calibration: Calibration,
    pub consistency: Consistency,
    #[serde(default)]
    pub negative_control: Option<NegativeControl>,
}

impl Params for FreeEcd {
    fn check(&self, c: &mut Checker) {
        self.pair.check(c);
        self.calibration.check(c);
        let cs = &self.consistency;
        c.require(!cs.s_samples.is_empty(), "consistency.s_samples", "must not be empty");
        c.finite("consistency.s_samples", &cs.s_samples);
        c.positive("consistency.tolerance", cs.tolerance);
        if let Some(v) = cs.s_max {
            c.positive("consistency.s_max", v);
        }
        if let Some(v) = cs.rel_tol {
            c.positive("consistency.rel_tol", v);
        }
        if let Some(p) = cs.probes {
            c.require(p >= 2, "consistency.probes", "must be at least 2");
        }
        if let Some(nc) = &self.negative_control {
            c.require(
                nc.n_factor.is_finite() && nc.n_factor != 1.0 && nc.n_factor != 0.0,
                "negative_control.n_factor",
                "must be finite and differ from 0 and 1",
            );
            c.positive("negative_control.min_residual", nc.min_residual);
        }
    }
}

fn run_free_ecd(p: &FreeEcd, dir: &Path) -> Result<KindReport, LabError> {
    let eps = p.calibration.epsilon;
    let mut pair = numeric(EcdPair::free(FourVector(p.pair.velocity), p.pair.c0(), eps, p.pair.charge))?;
    let cs = &p.consistency;
    if let Some(v) = cs.s_max {
        pair.quadrature.s_max = v;
    }
    if let Some(v) = cs.probes {
        pair.quadrature.probes = v;
    }
    if let Some(v) = cs.rel_tol {
        pair.quadrature.rel_tol = v;
    }
    let report = numeric(consistency_residual(&pair, &cs.s_samples))?;
    let control = match &p.negative_control {
        Some(nc) => {
            let mut bad = pair.clone();
            bad.calibration = bad.calibration.with_n(pair.calibration.n * nc.n_factor);
            Some((nc, numeric(consistency_residual(&bad, &cs.s_samples))?))
        }
        None => None,
    };

    let mut rep = KindReport::default();
    let q = &pair.quadrature;
    rep.tolerance("consistency.tolerance", cs.tolerance);
    rep.tolerance("quadrature.s_max", q.s_max);
    rep.tolerance("quadrature.rel_tol", q.rel_tol);
    rep.tolerance("quadrature.max_tail_bound", report.max_tail_bound);
    rep.tolerance("quadrature.max_error", report.max_quadrature_error);
    rep.diagnostic("calibration", pair.calibration);

    let mut columns = vec!["s", "residual"];
    if control.is_some() {
        columns.push("control_residual");
    }
    let rows: Vec<Vec<f64>> = report
        .s_samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut row = vec![*s, report.residuals[i]];
            if let Some((_, c)) = &control {
                row.push(c.residuals[i]);
            }
            row
        })
        .collect();
    rep.outputs.push(write_table(dir, "consistency.csv", &columns, &rows)?);

    let expected_n = -1.0 / (2.0 * PI * PI * eps);
    rep.checks.push(Check::within("calibration_n", pair.calibration.n, expected_n, 1e-4));
    rep.checks.push(Check::at_most("consistency_residual", report.max_residual, cs.tolerance));
    rep.checks.push(Check::at_most("residual_over_epsilon", report.max_residual / eps, cs.tolerance / eps).informational());
    if let Some((nc, c)) = control {
        rep.checks.push(Check::at_least("negative_control_residual", c.max_residual, nc.min_residual));
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// guiding-run

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Density {
    /// exp(−Σ_μ ((x − c − us)^μ / w_μ)²): a rigidly moving blob.
    Gaussian {
        centre: [f64; 4],
        velocity: [f64; 4],
        widths: [f64; 4],
    },
    /// |φ|² of the free pair.
    FreePair {
        velocity: [f64; 4],
        #[serde(default = "unit_amplitude")]
        amplitude: [f64; 2],
        epsilon: f64,
    },
}

fn default_guiding_h() -> f64 {
    1e-4
}

fn default_kappa_max() -> f64 {
    1e8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidingSection {
    pub start: [f64; 4],
    pub s0: f64,
    pub ds: f64,
    pub steps: usize,
    #[serde(default = "default_guiding_h")]
    pub h: f64,
    #[serde(default = "default_kappa_max")]
    pub kappa_max: f64,
    /// For the Gaussian: bound on the relative error of the recovered velocity.
    #[serde(default)]
    pub velocity_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidingRun {
    pub density: Density,
    pub guiding: GuidingSection,
}

impl Params for GuidingRun {
    fn check(&self, c: &mut Checker) {
        match &self.density {
            Density::Gaussian { centre, velocity, widths } => {
                c.finite("density.centre", centre);
                c.finite("density.velocity", velocity);
                for (a, w) in widths.iter().enumerate() {
                    c.positive(&format!("density.widths[{a}]"), *w);
                }
            }
            Density::FreePair {
                velocity,
                amplitude,
                epsilon,
            } => {
                c.finite("density.velocity", velocity);
                c.finite("density.amplitude", amplitude);
                c.require(FourVector(*velocity).square() > 0.0, "density.velocity", "must be timelike");
                c.positive("density.epsilon", *epsilon);
            }
        }
        let g = &self.guiding;
        c.finite("guiding.start", &g.start);
        c.finite("guiding.s0", &[g.s0]);
        c.require(g.ds != 0.0 && g.ds.is_finite(), "guiding.ds", "must be finite and nonzero");
        c.require(g.steps > 0, "guiding.steps", "must be at least 1");
        c.positive("guiding.h", g.h);
        c.require(g.kappa_max > 1.0, "guiding.kappa_max", "must exceed 1");
        if let Some(t) = g.velocity_tolerance {
            c.positive("guiding.velocity_tolerance", t);
        }
    }
}

fn run_guiding(p: &GuidingRun, dir: &Path) -> Result<KindReport, LabError> {
    let g = &p.guiding;
    let cfg = GuidingConfig {
        h: g.h,
        kappa_max: g.kappa_max,
    };
    let start = FourVector(g.start);
    let run = match &p.density {
        Density::Gaussian { centre, velocity, widths } => {
            let (c, u, w) = (FourVector(*centre), FourVector(*velocity), *widths);
            let rho = move |x: FourVector, s: f64| -> Result<f64, EcdError> {
                let d = x - c - u * s;
                Ok((-(0..4).map(|k| (d.0[k] / w[k]).powi(2)).sum::<f64>()).exp())
            };
            numeric(integrate_guiding(&rho, start, g.s0, g.ds, g.steps, &cfg))?
        }
        Density::FreePair {
            velocity,
            amplitude,
            epsilon,
        } => {
            let src = numeric(FreeClosedForm::new(
                FourVector(*velocity),
                Complex64::new(amplitude[0], amplitude[1]),
                *epsilon,
                1.0,
            ))?;
            let rho = |x: FourVector, s: f64| src.phi(x, s).map(|v| v.norm_sqr());
            numeric(integrate_guiding(&rho, start, g.s0, g.ds, g.steps, &cfg))?
        }
    };

    let mut rep = KindReport::default();
    rep.tolerance("guiding.h", g.h);
    rep.tolerance("guiding.kappa_max", g.kappa_max);
    let rows: Vec<Vec<f64>> = run
        .states
        .iter()
        .map(|st| {
            let mut row = vec![st.s];
            row.extend(st.gamma.0);
            row.push(st.condition);
            row.push(if st.violent { 1.0 } else { 0.0 });
            row
        })
        .collect();
    rep.outputs.push(write_table(
        dir,
        "guiding.csv",
        &["s", "gamma0", "gamma1", "gamma2", "gamma3", "condition", "violent"],
        &rows,
    )?);
    rep.diagnostic("steps_completed", run.states.len() - 1);
    rep.diagnostic("violent_event", run.event);
    if let (Density::Gaussian { velocity, .. }, Some(tol)) = (&p.density, g.velocity_tolerance) {
        let u = FourVector(*velocity);
        let worst = run
            .states
            .windows(2)
            .map(|w| ((w[1].gamma - w[0].gamma) * (1.0 / g.ds) - u).max_abs() / u.max_abs())
            .fold(0.0f64, f64::max);
        rep.tolerance("guiding.velocity_tolerance", tol);
        rep.checks.push(Check::at_most("velocity_error", worst, tol));
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// classical-limit-sweep

fn default_limit_probes() -> usize {
    64
}

fn default_limit_rel_tol() -> f64 {
    1e-7
}

fn default_action_nodes() -> usize {
    3001
}

fn default_trend_ratio() -> f64 {
    0.6
}

fn default_velocity_tolerance() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limit {
    /// ħ̄ values, each run with the action-phase ansatz and classical-path
    /// propagator; successive entries are compared.
    pub hbars: Vec<f64>,
    pub epsilon: f64,
    pub s_samples: Vec<f64>,
    /// Step of the phase-gradient stencil.
    pub h: f64,
    pub s_max: f64,
    #[serde(default = "default_limit_probes")]
    pub probes: usize,
    #[serde(default = "default_limit_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_action_nodes")]
    pub action_nodes: usize,
    #[serde(default = "default_trend_ratio")]
    pub trend_ratio: f64,
    #[serde(default = "default_velocity_tolerance")]
    pub velocity_tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalLimitSweep {
    pub particle: Particle,
    pub field: Field,
    pub integration: Integration,
    pub limit: Limit,
}

impl Params for ClassicalLimitSweep {
    fn check(&self, c: &mut Checker) {
        self.particle.check(c, "particle");
        self.field.check(c);
        self.integration.check(c);
        let l = &self.limit;
        c.require(!l.hbars.is_empty(), "limit.hbars", "must not be empty");
        for (i, h) in l.hbars.iter().enumerate() {
            c.positive(&format!("limit.hbars[{i}]"), *h);
        }
        c.positive("limit.epsilon", l.epsilon);
        c.require(!l.s_samples.is_empty(), "limit.s_samples", "must not be empty");
        c.positive("limit.h", l.h);
        c.positive("limit.s_max", l.s_max);
        c.positive("limit.rel_tol", l.rel_tol);
        c.positive("limit.trend_ratio", l.trend_ratio);
        c.positive("limit.velocity_tolerance", l.velocity_tolerance);
        c.require(l.probes >= 2, "limit.probes", "must be at least 2");
        c.require(l.action_nodes >= 2, "limit.action_nodes", "must be at least 2");
        let [a, b] = self.integration.s_span;
        c.require(
            l.s_samples.iter().all(|s| s - l.s_max >= a && s + l.s_max <= b),
            "limit.s_samples",
            "± limit.s_max must lie inside integration.s_span",
        );
    }
}

fn run_classical_limit(p: &ClassicalLimitSweep, dir: &Path) -> Result<KindReport, LabError> {
    let field = p.field.spec();
    let traj = numeric(p.integration.trajectory(&p.particle, &field))?;
    let (s0, s1) = traj.s_range();
    let wl = Worldline::Sampled { trajectory: traj };
    let l = &p.limit;
    let q = p.particle.q;
    let table = numeric(ActionTable::along(&wl, &field, q, s0, s1, l.action_nodes))?;

    let mut rep = KindReport::default();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &hbar in &l.hbars {
        let calibration = numeric(ecd_core::ecd::calibrate_with_hbar(l.epsilon, hbar))?;
        let pair = EcdPair {
            worldline: wl.clone(),
            ansatz: BoundaryAnsatz::ActionPhase {
                c: Complex64::new(1.0, 0.0),
                table: table.clone(),
                hbar,
            },
            propagator: PairPropagator::ClassicalPaths {
                field: field.clone(),
                q,
                hbar,
                steps_per_unit: 0.0,
                min_steps: 64,
            },
            calibration,
            field: field.clone(),
            q,
            quadrature: PhiQuadrature {
                s_max: l.s_max,
                probes: l.probes,
                rel_tol: l.rel_tol,
                ..PhiQuadrature::for_epsilon(l.epsilon)
            },
        };
        let report = numeric(classical_phase_gradient_check(&pair, &l.s_samples, l.h))?;
        let ratio = numeric(compton_ratio(&pair, l.s_samples[0]))?.unwrap_or(0.0);
        for (s, r) in report.s_samples.iter().zip(&report.residuals) {
            rows.push(vec![hbar, ratio, *s, *r]);
        }
        summary.push((hbar, ratio, report));
    }
    rep.outputs.push(write_table(
        dir,
        "phase_gradient.csv",
        &["hbar", "compton_ratio", "s", "residual"],
        &rows,
    )?);
    rep.tolerance("limit.h", l.h);
    rep.tolerance("limit.s_max", l.s_max);
    rep.tolerance("limit.rel_tol", l.rel_tol);
    rep.tolerance("integration.tolerance", p.integration.tolerance);
    for w in summary.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let name = format!("residual_ratio_hbar_{}_to_{}", a.0, b.0);
        rep.checks.push(Check::at_most(&name, b.2.max_residual / a.2.max_residual, l.trend_ratio).over([a.1, b.1]));
    }
    let worst_velocity = summary.iter().map(|s| s.2.max_velocity_error).fold(0.0, f64::max);
    rep.checks.push(Check::at_most("velocity_error", worst_velocity, l.velocity_tolerance));
    rep.diagnostic(
        "absolute_residuals",
        summary
            .iter()
            .map(|s| (s.0, s.2.max_absolute_residual))
            .collect::<Vec<_>>(),
    );
    Ok(rep)
}

// ---------------------------------------------------------------------------
// current-regularization

fn default_slope_tolerance() -> f64 {
    0.02
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
}

fn default_rho_min() -> f64 {
    10.0
}

fn default_rho_max() -> f64 {
    100.0
}

fn default_remainder_points() -> usize {
    12
}

fn default_bound_slope() -> f64 {
    -4.0
}

fn default_claimed_slope() -> f64 {
    -5.0
}

fn default_claimed_tolerance() -> f64 {
    0.5
}

/// Post-subtraction analysis in the scaled radius ρ = r/√ε.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemainderSection {
    #[serde(default = "default_rho_min")]
    pub rho_min: f64,
    #[serde(default = "default_rho_max")]
    pub rho_max: f64,
    #[serde(default = "default_remainder_points")]
    pub points: usize,
    #[serde(default = "default_bound_slope")]
    pub bound_slope: f64,
    #[serde(default = "default_claimed_slope")]
    pub claimed_slope: f64,
    #[serde(default = "default_claimed_tolerance")]
    pub claimed_tolerance: f64,
}

impl Default for RemainderSection {
    fn default() -> Self {
        Self {
            rho_min: default_rho_min(),
            rho_max: default_rho_max(),
            points: default_remainder_points(),
            bound_slope: default_bound_slope(),
            claimed_slope: default_claimed_slope(),
            claimed_tolerance: default_claimed_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentRegularization {
    pub pair: Pair,
    pub calibration: Calibration,
    pub profile: ProfileSection,
    #[serde(default)]
    pub remainder: RemainderSection,
}

impl Params for CurrentRegularization {
    fn check(&self, c: &mut Checker) {
        self.pair.check(c);
        self.calibration.check(c);
        let pr = &self.profile;
        c.positive("profile.r_min", pr.r_min);
        c.require(pr.r_max > pr.r_min, "profile.r_max", "must exceed profile.r_min");
        c.require(pr.points >= 2, "profile.points", "must be at least 2");
        c.positive("profile.slope_tolerance", pr.slope_tolerance);
        let rm = &self.remainder;
        c.positive("remainder.rho_min", rm.rho_min);
        c.require(rm.rho_max > rm.rho_min, "remainder.rho_max", "must exceed remainder.rho_min");
        c.require(rm.points >= 2, "remainder.points", "must be at least 2");
        c.positive("remainder.claimed_tolerance", rm.claimed_tolerance);
    }
}

fn run_current_regularization(p: &CurrentRegularization, dir: &Path) -> Result<KindReport, LabError> {
    let src = numeric(p.pair.closed_form(p.calibration.epsilon))?;
    let cal = src.calibration;
    let coef = j_div_coefficient(src.c, &cal, src.q);
    let pr = &p.profile;
    let radii = geomspace(pr.r_min, pr.r_max, pr.points);
    let rows = radii
        .par_iter()
        .map(|&r| -> Result<Vec<f64>, EcdError> {
            let j0 = free_charge_j0(r, src.u, src.c, &cal, src.q)?;
            let div = light_cone_current(&src.worldline, FourVector::new(0.0, r, 0.0, 0.0), coef, LightConeWeight::Charge)?;
            Ok(vec![r, j0, div.0[0], j0 - div.0[0]])
        })
        .collect::<Result<Vec<_>, _>>();
    let rows = numeric(rows)?;
    let j0: Vec<f64> = rows.iter().map(|r| r[1].abs()).collect();
    let tail = loglog_fit(&radii, &j0);

    let rm = &p.remainder;
    let fit = numeric(fit_profile_remainder(FreeProfile::Charge, rm.rho_min, rm.rho_max, rm.points))?;
    let rem_rows: Vec<Vec<f64>> = fit
        .samples
        .iter()
        .map(|s| vec![s.rho, s.remainder, s.amplitude, s.smooth])
        .collect();

    let mut rep = KindReport::default();
    rep.outputs.push(write_table(dir, "profile.csv", &["r", "j0", "j_div0", "finite0"], &rows)?);
    rep.outputs.push(write_table(
        dir,
        "remainder.csv",
        &["rho", "remainder", "amplitude", "smooth"],
        &rem_rows,
    )?);
    rep.tolerance("profile.slope_tolerance", pr.slope_tolerance);
    rep.tolerance("remainder.claimed_tolerance", rm.claimed_tolerance);
    rep.diagnostic("divergent_coefficient", coef);
    rep.diagnostic("calibration", cal);

    let slope = tail.map_or(f64::NAN, |f| f.slope);
    rep.checks.push(Check::within("tail_slope", slope, -1.0, pr.slope_tolerance).over([pr.r_min, pr.r_max]));
    let env = fit.amplitude_fit.map_or(f64::NAN, |f| f.slope);
    let window = [rm.rho_min, rm.rho_max];
    rep.checks.push(Check::at_most("remainder_envelope_slope", env, rm.bound_slope).over(window).informational());
    rep.checks.push(
        Check::within("remainder_envelope_vs_claim", env, rm.claimed_slope, rm.claimed_tolerance)
            .over(window)
            .informational(),
    );
    if let Some(sf) = fit.smooth_fit {
        rep.checks.push(Check::at_most("remainder_smooth_slope", sf.slope, rm.bound_slope).over(window).informational());
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------

pub(crate) fn execute(params: &ScenarioParams, dir: &Path) -> Result<KindReport, LabError> {
    match params {
        ScenarioParams::ClassicalOrbit(p) => run_classical_orbit(p, dir),
        ScenarioParams::LwFieldMap(p) => run_lw_field_map(p, dir),
        ScenarioParams::ConservationAudit(p) => run_conservation_audit(p, dir),
        ScenarioParams::FreeEcd(p) => run_free_ecd(p, dir),
        ScenarioParams::GuidingRun(p) => run_guiding(p, dir),
        ScenarioParams::ClassicalLimitSweep(p) => run_classical_limit(p, dir),
        ScenarioParams::CurrentRegularization(p) => run_current_regularization(p, dir),
    }
}
