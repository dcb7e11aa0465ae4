//! Classical sources: retarded potentials and fields, the canonical stress
//! tensor, line-distribution deposits, and the angular-momentum and
//! dilatation currents built from them.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{charge_conjugate, Trajectory};
use crate::error::{domain, EcdError, Result};
use crate::minkowski::{grid_component_charge, AntisymTensor, CurrentField, EventGrid, FourVector, METRIC};

/// Normalisation of the retarded potential, A = κ q γ̇ / (2|γ̇·(x−γ)|).
/// κ = 1/(2π) makes □A = j hold with the standard retarded Green function.
pub const LW_KAPPA: f64 = 1.0 / (2.0 * PI);

pub type Tensor = [[f64; 4]; 4];

/// Rank-2 contravariant samples on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorField {
    pub grid: EventGrid,
    pub values: Vec<Tensor>,
    pub symmetric: bool,
    pub label: String,
}

impl TensorField {
    pub fn new(grid: EventGrid, values: Vec<Tensor>, symmetric: bool, label: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(domain("tensor field size does not match grid"));
        }
        if symmetric && values.iter().any(|t| asymmetry(t) != 0.0) {
            return Err(domain("tensor flagged symmetric is not exactly symmetric"));
        }
        Ok(Self {
            grid,
            values,
            symmetric,
            label: label.into(),
        })
    }

    pub fn sample<F>(grid: EventGrid, symmetric: bool, label: impl Into<String>, f: F) -> Result<Self>
    where
        F: Fn(FourVector) -> Tensor + Sync,
    {
        let values = grid.map_points(f);
        Self::new(grid, values, symmetric, label)
    }

    pub fn zeros(grid: EventGrid, label: impl Into<String>) -> Self {
        Self {
            grid,
            values: vec![[[0.0; 4]; 4]; grid.len()],
            symmetric: true,
            label: label.into(),
        }
    }

    pub fn add(&self, other: &TensorField, label: impl Into<String>) -> Result<Self> {
        if self.grid != other.grid {
            return Err(domain("cannot add tensor fields on different grids"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] + b[i][j])))
            .collect();
        Self::new(self.grid, values, self.symmetric && other.symmetric, label)
    }

    /// The current j^μ = T^{μν} for fixed ν (first index is the divergence index).
    pub fn column(&self, nu: usize, label: impl Into<String>) -> CurrentField {
        CurrentField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .map(|t| FourVector(std::array::from_fn(|mu| t[mu][nu])))
                .collect(),
            label: label.into(),
        }
    }

    /// ∫d³x T^{0ν} over one time slice.
    pub fn slice_charge(&self, nu: usize, slice: usize) -> Result<f64> {
        grid_component_charge(&self.grid, slice, |lin| self.values[lin][0][nu])
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.values.iter().fold(0.0, |m, t| m.max(asymmetry(t)))
    }
}

pub fn asymmetry(t: &Tensor) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            m = m.max((t[i][j] - t[j][i]).abs());
        }
    }
    m
}

/// g_{μν}T^{μν}.
pub fn trace(t: &Tensor) -> f64 {
    (0..4).map(|i| METRIC[i] * t[i][i]).sum()
}

/// Θ^{νμ} = ¼g^{νμ}F² + F^{νρ}F_ρ^μ, computed on the upper triangle and
/// mirrored so that symmetry is exact.
pub fn stress_tensor(f: &AntisymTensor) -> Tensor {
    let up = f.upper();
    let f2 = f.invariant_f2();
    let mut out = [[0.0; 4]; 4];
    for nu in 0..4 {
        for mu in nu..4 {
            let mut acc = 0.0;
            for rho in 0..4 {
                acc += up[nu][rho] * METRIC[rho] * up[rho][mu];
            }
            if nu == mu {
                acc += 0.25 * METRIC[nu] * f2;
            }
            out[nu][mu] = acc;
            out[mu][nu] = acc;
        }
    }
    out
}

/// Symmetric bilinear part of the stress tensor: Θ(F+G) − Θ(F) − Θ(G).
pub fn stress_tensor_cross(f: &AntisymTensor, g: &AntisymTensor) -> Tensor {
    let a = stress_tensor(&(*f + *g));
    let b = stress_tensor(f);
    let c = stress_tensor(g);
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] - b[i][j] - c[i][j]))
}

/// Bisection-plus-Newton root of `f` on [a, b] with f(a)·f(b) ≤ 0.
fn polish_root<F, D>(f: F, df: D, mut a: f64, mut b: f64, tol: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a) < 1e-10 * (1.0 + m.abs()) {
            a = m;
            b = m;
            break;
        }
        if (fa < 0.0) == (fm < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let mut s = 0.5 * (a + b);
    for _ in 0..20 {
        let v = f(s);
        if v.abs() < tol {
            break;
        }
        let d = df(s);
        if d == 0.0 {
            break;
        }
        let next = s - v / d;
        if !next.is_finite() {
            break;
        }
        s = next;
    }
    s
}

/// Retarded root s* of (x − γ_s)² = 0 with x⁰ > γ⁰(s*), plus γ, γ̇ there.
pub fn retarded_root(x: FourVector, traj: &Trajectory) -> Result<(f64, FourVector, FourVector)> {
    if is_reversed(traj) {
        let (s, g, gd) = retarded_root(x, &charge_conjugate(traj))?;
        return Ok((-s, g, -gd));
    }
    let f = |s: f64| {
        let (g, _) = traj.interpolate(s).expect("root search stays in range");
        (x - g).square()
    };
    let df = |s: f64| {
        let (g, gd) = traj.interpolate(s).expect("root search stays in range");
        -2.0 * gd.dot(&(x - g))
    };
    let p = traj.samples();
    for w in p.windows(2) {
        let (fa, fb) = ((x - w[0].gamma).square(), (x - w[1].gamma).square());
        if (fa <= 0.0) != (fb <= 0.0) || fa == 0.0 {
            let s = polish_root(f, df, w[0].s, w[1].s, 1e-12);
            let (g, gd) = traj.interpolate(s)?;
            if x.0[0] > g.0[0] {
                let sep = x - g;
                if sep.max_abs() < 1e-7 * (1.0 + x.max_abs()) {
                    return Err(EcdError::Singular(format!("evaluation point lies on the worldline at s = {s}")));
                }
                return Ok((s, g, gd));
            }
        }
    }
    if p.iter().any(|q| (x - q.gamma).max_abs() == 0.0) {
        return Err(EcdError::Singular("evaluation point lies on the worldline".into()));
    }
    Err(EcdError::Coverage(format!(
        "no retarded root bracketed for x = {:?}; extend the trajectory into the past",
        x.0
    )))
}

/// Retarded Liénard–Wiechert potential A^μ(x).
pub fn lw_potential(x: FourVector, traj: &Trajectory) -> Result<FourVector> {
    let (_, g, gd) = retarded_root(x, traj)?;
    let denom = 2.0 * gd.dot(&(x - g)).abs();
    if denom == 0.0 {
        return Err(EcdError::Singular("γ̇·(x−γ) vanishes at the retarded root".into()));
    }
    Ok(gd * (LW_KAPPA * traj.q / denom))
}

/// F^{μν} = ∂^μA^ν − ∂^νA^μ from central differences of the potential.
pub fn lw_field(x: FourVector, traj: &Trajectory, h: f64) -> Result<AntisymTensor> {
    if !(h > 0.0) {
        return Err(domain("finite-difference step must be positive"));
    }
    let mut d = [[0.0; 4]; 4];
    for mu in 0..4 {
        let mut e = FourVector::ZERO;
        e.0[mu] = h;
        let diff = (lw_potential(x + e, traj)? - lw_potential(x - e, traj)?) * (0.5 / h);
        for nu in 0..4 {
            d[mu][nu] = METRIC[mu] * diff.0[nu];
        }
    }
    Ok(AntisymTensor::antisymmetrize(d).scale(2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DepositKernel {
    #[default]
    NearestCell,
    TrilinearNearestTime,
}

/// True when the worldline runs backwards in x⁰ (γ̇⁰ < 0 at its first
/// sample). Such worldlines are evaluated through their conjugate so that
/// charge conjugation acts on every derived quantity bit for bit.
fn is_reversed(traj: &Trajectory) -> bool {
    traj.samples()[0].gamma_dot.0[0] < 0.0
}

/// Point where γ⁰(s) = t, with (s, γ, γ̇); `None` if γ⁰ never reaches t.
pub fn time_crossing(traj: &Trajectory, t: f64) -> Result<Option<(f64, FourVector, FourVector)>> {
    if is_reversed(traj) {
        return Ok(time_crossing(&charge_conjugate(traj), t)?.map(|(s, g, gd)| (-s, g, -gd)));
    }
    let p = traj.samples();
    let sign = p[0].gamma_dot.0[0].signum();
    if p.iter().any(|q| q.gamma_dot.0[0].signum() != sign || q.gamma_dot.0[0] == 0.0) {
        return Err(EcdError::Unsupported(
            "worldline turns in time (γ̇⁰ changes sign); slice deposits are undefined".into(),
        ));
    }
    for w in p.windows(2) {
        let (a, b) = (w[0].gamma.0[0] - t, w[1].gamma.0[0] - t);
        if a == 0.0 {
            return Ok(Some((w[0].s, w[0].gamma, w[0].gamma_dot)));
        }
        if (a < 0.0) != (b < 0.0) {
            let f = |s: f64| traj.interpolate(s).expect("in range").0 .0[0] - t;
            let df = |s: f64| traj.interpolate(s).expect("in range").1 .0[0];
            let s = polish_root(f, df, w[0].s, w[1].s, 1e-14 * (1.0 + t.abs()));
            let (g, gd) = traj.interpolate(s)?;
            return Ok(Some((s, g, gd)));
        }
    }
    let last = p[p.len() - 1];
    if last.gamma.0[0] == t {
        return Ok(Some((last.s, last.gamma, last.gamma_dot)));
    }
    Ok(None)
}

fn spread<F: FnMut(usize, f64)>(grid: &EventGrid, slice: usize, pos: [f64; 3], kernel: DepositKernel, mut put: F) {
    let base = slice * grid.strides()[0];
    let inv_vol = 1.0 / grid.spatial_cell_volume();
    match kernel {
        DepositKernel::NearestCell => {
            let mut idx = [slice, 0, 0, 0];
            for a in 1..4 {
                let f = ((pos[a - 1] - grid.origin.0[a]) / grid.spacings[a]).round();
                if f < 0.0 || f >= grid.extents[a] as f64 {
                    return;
                }
                idx[a] = f as usize;
            }
            put(grid.linear(idx), inv_vol);
        }
        DepositKernel::TrilinearNearestTime => {
            let mut lo = [0i64; 3];
            let mut frac = [0.0; 3];
            for a in 0..3 {
                let f = (pos[a] - grid.origin.0[a + 1]) / grid.spacings[a + 1];
                lo[a] = f.floor() as i64;
                frac[a] = f - f.floor();
            }
            for corner in 0..8 {
                let mut w = inv_vol;
                let mut lin = base;
                let mut inside = true;
                for a in 0..3 {
                    let bit = (corner >> a) & 1;
                    let i = lo[a] + bit as i64;
                    if i < 0 || i >= grid.extents[a + 1] as i64 {
                        inside = false;
                        break;
                    }
                    w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                    lin += i as usize * grid.strides()[a + 1];
                }
                if inside && w != 0.0 {
                    put(lin, w);
                }
            }
        }
    }
}

/// Deposits ∫ds δ⁴(x − γ_s) w(s, γ, γ̇) slice by slice. On each slice the
/// δ(x⁰ − γ⁰) factor contributes 1/|γ̇⁰| at the crossing.
pub fn deposit_line<W>(
    traj: &Trajectory,
    grid: &EventGrid,
    kernel: DepositKernel,
    label: impl Into<String>,
    weight: W,
) -> Result<CurrentField>
where
    W: Fn(f64, FourVector, FourVector) -> FourVector,
{
    let mut values = vec![FourVector::ZERO; grid.len()];
    for slice in 0..grid.extents[0] {
        let t = grid.coordinate(0, slice);
        let Some((s, g, gd)) = time_crossing(traj, t)? else {
            return Err(EcdError::Coverage(format!("worldline does not cross grid slice t = {t}")));
        };
        let w = weight(s, g, gd) * (1.0 / gd.0[0].abs());
        spread(grid, slice, g.spatial(), kernel, |lin, k| values[lin] += w * k);
    }
    CurrentField::new(*grid, values, label)
}

/// Tensor-valued variant of [`deposit_line`].
pub fn deposit_line_tensor<W>(
    traj: &Trajectory,
    grid: &EventGrid,
    kernel: DepositKernel,
    label: impl Into<String>,
    weight: W,
) -> Result<TensorField>
where
    W: Fn(f64, FourVector, FourVector) -> Tensor,
{
    let mut values = vec![[[0.0; 4]; 4]; grid.len()];
    for slice in 0..grid.extents[0] {
        let t = grid.coordinate(0, slice);
        let Some((s, g, gd)) = time_crossing(traj, t)? else {
            return Err(EcdError::Coverage(format!("worldline does not cross grid slice t = {t}")));
        };
        let w = weight(s, g, gd);
        let inv = 1.0 / gd.0[0].abs();
        spread(grid, slice, g.spatial(), kernel, |lin, k| {
            for i in 0..4 {
                for j in 0..4 {
                    values[lin][i][j] += w[i][j] * inv * k;
                }
            }
        });
    }
    let symmetric = values.iter().all(|t| asymmetry(t) == 0.0);
    TensorField::new(*grid, values, symmetric, label)
}

/// j = q∫ds δ⁴(x − γ_s) γ̇_s.
pub fn deposit_electric_current(traj: &Trajectory, grid: &EventGrid, kernel: DepositKernel) -> Result<CurrentField> {
    let q = traj.q;
    deposit_line(traj, grid, kernel, "electric current j", |_, _, gd| gd * q)
}

/// b = ∫ds δ⁴(x − γ_s) γ̇²γ̇_s.
pub fn deposit_mass_squared_current(
    traj: &Trajectory,
    grid: &EventGrid,
    kernel: DepositKernel,
) -> Result<CurrentField> {
    deposit_line(traj, grid, kernel, "mass-squared current b", |_, _, gd| gd * gd.square())
}

/// Matter energy-momentum ∫ds δ⁴(x − γ_s) γ̇^ν γ̇^μ.
pub fn deposit_matter_tensor(traj: &Trajectory, grid: &EventGrid, kernel: DepositKernel) -> Result<TensorField> {
    deposit_line_tensor(traj, grid, kernel, "matter energy-momentum", |_, _, gd| {
        std::array::from_fn(|i| std::array::from_fn(|j| gd.0[i] * gd.0[j]))
    })
}

/// ∫d³x of the matter tensor's ν0 column at x⁰ = t: γ̇^ν sign(γ̇⁰) at the crossing.
pub fn mechanical_momentum(traj: &Trajectory, x0: f64) -> Result<FourVector> {
    match time_crossing(traj, x0)? {
        Some((_, _, gd)) => Ok(gd * gd.0[0].signum()),
        None => Err(EcdError::Coverage(format!("worldline never reaches x⁰ = {x0}"))),
    }
}

/// One of the six currents J^{νρ,μ} = p^{μν}x^ρ − p^{μρ}x^ν (ν < ρ).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngularMomentumCurrent {
    pub nu: usize,
    pub rho: usize,
    pub current: CurrentField,
}

pub fn angular_momentum_current(p: &TensorField) -> Vec<AngularMomentumCurrent> {
    let mut out = Vec::with_capacity(6);
    for nu in 0..4 {
        for rho in (nu + 1)..4 {
            let values = (0..p.grid.len())
                .into_par_iter()
                .map(|lin| {
                    let x = p.grid.point_linear(lin);
                    let t = &p.values[lin];
                    FourVector(std::array::from_fn(|mu| t[mu][nu] * x.0[rho] - t[mu][rho] * x.0[nu]))
                })
                .collect();
            out.push(AngularMomentumCurrent {
                nu,
                rho,
                current: CurrentField {
                    grid: p.grid,
                    values,
                    label: format!("angular momentum J^{{{nu}{rho},mu}}"),
                },
            });
        }
    }
    out
}

/// ξ^ν = p^{νμ}x_μ − Σ∫ds δ⁴ s γ̇²γ̇^ν.
///
/// `field_p` carries the field part of p sampled on the grid; the matter
/// part γ̇^ν(γ̇·γ) and the line term are deposited at the exact crossing
/// point with `kernel`.
pub fn dilatation_current(field_p: &TensorField, trajs: &[Trajectory], kernel: DepositKernel) -> Result<CurrentField> {
    let grid = field_p.grid;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|lin| {
            let xl = grid.point_linear(lin).lower();
            let t = &field_p.values[lin];
            FourVector(std::array::from_fn(|nu| (0..4).map(|mu| t[nu][mu] * xl.0[mu]).sum()))
        })
        .collect();
    let mut xi = CurrentField::new(grid, values, "dilatation current xi")?;
    for traj in trajs {
        let line = deposit_line(traj, &grid, kernel, "line", |s, g, gd| {
            gd * gd.dot(&g) - gd * (s * gd.square())
        })?;
        xi = xi.add(&line, 1.0, "dilatation current xi")?;
    }
    Ok(xi)
}

/// Exact per-particle dilatation charge at x⁰ = t with the spatial origin
/// moved to `a` (coordinates x ↦ x − a) and the s-origin moved by `b`
/// (s ↦ s − b).
pub fn particle_dilatation_charge(traj: &Trajectory, t: f64, a: [f64; 3], b: f64) -> Result<f64> {
    let (s, g, gd) = time_crossing(traj, t)?
        .ok_or_else(|| EcdError::Coverage(format!("worldline never reaches x⁰ = {t}")))?;
    let shifted = g - FourVector::new(0.0, a[0], a[1], a[2]);
    Ok(gd.0[0].signum() * (gd.dot(&shifted) - (s - b) * gd.square()))
}

/// |D_shifted − (D + P·a + Σm²b)| with P·a = Σ_i P^i a^i (spatial origin
/// displacement) and b the per-particle s-origin shifts.
pub fn dilatation_shift_check(
    d_shifted: f64,
    d: f64,
    p: FourVector,
    masses2: &[f64],
    a: [f64; 3],
    b: &[f64],
) -> Result<f64> {
    if masses2.len() != b.len() {
        return Err(domain(format!(
            "{} masses but {} s-origin shifts",
            masses2.len(),
            b.len()
        )));
    }
    let pa = p.0[1] * a[0] + p.0[2] * a[1] + p.0[3] * a[2];
    let mb: f64 = masses2.iter().zip(b).map(|(m, b)| m * b).sum();
    Ok((d_shifted - (d + pa + mb)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::apply_scaling;
    use crate::minkowski::{grid_charge, grid_divergence, lorentz_boost};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn static_charge(q: f64) -> Trajectory {
        Trajectory::uniform(FourVector::ZERO, FourVector::new(1.0, 0.0, 0.0, 0.0), q, -50.0, 50.0, 101).unwrap()
    }

    #[test]
    fn coulomb_potential() {
        let t = static_charge(2.0);
        let x = FourVector::new(10.0, 1.0, 2.0, -2.0);
        let a = lw_potential(x, &t).unwrap();
        assert_abs_diff_eq!(a.0[0], 2.0 / (4.0 * PI * 3.0), epsilon = 1e-14);
        assert_eq!(&a.0[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn conjugation_flips_potential() {
        let t = static_charge(1.0);
        let x = FourVector::new(3.0, 0.5, -1.0, 0.25);
        let a = lw_potential(x, &t).unwrap();
        let b = lw_potential(x, &charge_conjugate(&t)).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn moving_charge_is_boosted_coulomb() {
        let beta = [0.3, -0.2, 0.4];
        let u = lorentz_boost(FourVector::new(1.0, 0.0, 0.0, 0.0), beta).unwrap();
        let moving = Trajectory::uniform(FourVector::ZERO, u, 1.0, -40.0, 40.0, 161).unwrap();
        let rest = static_charge(1.0);
        let x_rest = FourVector::new(0.7, 1.0, 0.5, -1.5);
        let expected = lorentz_boost(lw_potential(x_rest, &rest).unwrap(), beta).unwrap();
        let got = lw_potential(lorentz_boost(x_rest, beta).unwrap(), &moving).unwrap();
        assert!((got - expected).max_abs() < 1e-10);
    }

    #[test]
    fn uncovered_and_singular_points() {
        let t = static_charge(1.0);
        assert!(matches!(lw_potential(FourVector::new(-60.0, 1.0, 0.0, 0.0), &t), Err(EcdError::Coverage(_))));
        assert!(matches!(lw_potential(FourVector::new(3.0, 0.0, 0.0, 0.0), &t), Err(EcdError::Singular(_))));
    }

    #[test]
    fn coulomb_field() {
        let t = static_charge(1.0);
        let x = FourVector::new(5.0, 0.0, 0.0, 2.0);
        let f = lw_field(x, &t, 1e-3).unwrap();
        assert_abs_diff_eq!(f.electric()[2], 1.0 / (4.0 * PI * 4.0), epsilon = 1e-8);
        assert!(f.magnetic().iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn stress_tensor_of_electric_field() {
        let e = 1.7;
        let th = stress_tensor(&AntisymTensor::from_e_b([0.0, 0.0, e], [0.0; 3]));
        assert_abs_diff_eq!(th[0][0], e * e / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(th[3][3], -e * e / 2.0, epsilon = 1e-14);
        assert_eq!(stress_tensor(&AntisymTensor::ZERO), [[0.0; 4]; 4]);
    }

    #[test]
    fn poynting_vector_sign() {
        // E along x, B along y: energy flows along +z.
        let th = stress_tensor(&AntisymTensor::from_e_b([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]));
        assert_abs_diff_eq!(th[0][3], 1.0, epsilon = 1e-15);
    }

    fn grid() -> EventGrid {
        EventGrid::centred(-1.0, [0.0; 3], [0.5, 0.25, 0.25, 0.25], [5, 9, 9, 9]).unwrap()
    }

    #[test]
    fn deposited_charge_is_q_on_every_slice() {
        let u = FourVector::new(1.25, 0.75, 0.0, 0.0);
        let t = Trajectory::uniform(FourVector::new(0.0, -0.3, 0.1, 0.0), u, 1.5, -10.0, 10.0, 41).unwrap();
        for kernel in [DepositKernel::NearestCell, DepositKernel::TrilinearNearestTime] {
            let j = deposit_electric_current(&t, &grid(), kernel).unwrap();
            for k in 0..5 {
                assert_abs_diff_eq!(grid_charge(&j, k).unwrap(), 1.5, epsilon = 1e-13);
            }
            let jc = deposit_electric_current(&charge_conjugate(&t), &grid(), kernel).unwrap();
            for (a, b) in j.values.iter().zip(&jc.values) {
                assert_eq!(*a, -*b);
            }
        }
    }

    #[test]
    fn mass_squared_slice_integral() {
        let u = FourVector::new(1.25, 0.75, 0.0, 0.0);
        let t = Trajectory::uniform(FourVector::ZERO, u, 1.0, -10.0, 10.0, 41).unwrap();
        let b = deposit_mass_squared_current(&t, &grid(), DepositKernel::TrilinearNearestTime).unwrap();
        let scaled = deposit_mass_squared_current(&apply_scaling(&t, 2.0).unwrap(), &grid(), DepositKernel::TrilinearNearestTime)
            .unwrap();
        for k in 0..5 {
            assert_abs_diff_eq!(grid_charge(&b, k).unwrap(), u.square(), epsilon = 1e-13);
            assert_abs_diff_eq!(grid_charge(&scaled, k).unwrap(), u.square() / 4.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn turning_worldlines_are_unsupported() {
        let mut samples = static_charge(1.0).samples().to_vec();
        samples[3].gamma_dot = -samples[3].gamma_dot;
        let t = Trajectory::new(samples, 1.0).unwrap();
        assert!(matches!(
            deposit_electric_current(&t, &grid(), DepositKernel::NearestCell),
            Err(EcdError::Unsupported(_))
        ));
    }

    #[test]
    fn mechanical_momentum_of_uniform_motion() {
        let u = FourVector::new(1.25, 0.75, 0.0, 0.0);
        let t = Trajectory::uniform(FourVector::ZERO, u, 1.0, -10.0, 10.0, 21).unwrap();
        let p = mechanical_momentum(&t, 0.3).unwrap();
        assert!((p - u).max_abs() < 1e-14);
        assert_eq!(mechanical_momentum(&charge_conjugate(&t), 0.3).unwrap(), p);
        assert!(mechanical_momentum(&t, 100.0).is_err());
    }

    #[test]
    fn angular_momentum_of_constant_symmetric_tensor_is_conserved() {
        let g = grid();
        let sym = [[2.0, 0.1, 0.2, 0.3], [0.1, 1.0, 0.4, 0.5], [0.2, 0.4, 0.7, 0.6], [0.3, 0.5, 0.6, 0.9]];
        let p = TensorField::sample(g, true, "p", |_| sym).unwrap();
        for j in angular_momentum_current(&p) {
            assert!(grid_divergence(&j.current).unwrap().interior_max_abs() < 1e-12);
        }
        let mut asym = sym;
        asym[0][1] = 0.9;
        let p = TensorField::sample(g, false, "p", |_| asym).unwrap();
        let worst = angular_momentum_current(&p)
            .iter()
            .map(|j| grid_divergence(&j.current).unwrap().interior_max_abs())
            .fold(0.0, f64::max);
        assert!(worst > 0.5);
    }

    #[test]
    fn dilatation_charge_of_free_particle() {
        let g = grid();
        let u = FourVector::new(1.25, 0.0, 0.75, 0.0);
        let t = Trajectory::uniform(FourVector::new(0.0, 0.3, -0.4, 0.2), u, 1.0, -10.0, 10.0, 41).unwrap();
        let xi = dilatation_current(&TensorField::zeros(g, "no field"), &[t.clone()], DepositKernel::NearestCell).unwrap();
        let d0 = grid_charge(&xi, 0).unwrap();
        for k in 1..5 {
            assert_abs_diff_eq!(grid_charge(&xi, k).unwrap(), d0, epsilon = 1e-12);
        }
        let exact = u.dot(&FourVector::new(0.0, 0.3, -0.4, 0.2));
        assert_abs_diff_eq!(d0, exact, epsilon = 1e-12);
        let scaled = particle_dilatation_charge(&apply_scaling(&t, 3.0).unwrap(), 0.0, [0.0; 3], 0.0).unwrap();
        assert_abs_diff_eq!(scaled, exact, epsilon = 1e-12);
    }

    #[test]
    fn shift_identity_examples() {
        assert_eq!(dilatation_shift_check(2.0, 2.0, FourVector::ZERO, &[1.0], [0.0; 3], &[0.0]).unwrap(), 0.0);
        let u = FourVector::new(1.25, 0.75, 0.0, 0.0);
        let t = Trajectory::uniform(FourVector::ZERO, u, 1.0, -10.0, 10.0, 41).unwrap();
        let d = particle_dilatation_charge(&t, 0.5, [0.0; 3], 0.0).unwrap();
        let da = particle_dilatation_charge(&t, 0.5, [1.0, 0.0, 0.0], 0.0).unwrap();
        assert_abs_diff_eq!(da - d, u.0[1], epsilon = 1e-12);
        let db = particle_dilatation_charge(&t, 0.5, [0.0; 3], 1.0).unwrap();
        assert_abs_diff_eq!(db - d, u.square(), epsilon = 1e-12);
        assert!(dilatation_shift_check(0.0, 0.0, u, &[1.0, 2.0], [0.0; 3], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn stress_tensor_is_symmetric_and_traceless(e in prop::array::uniform3(-10.0f64..10.0),
                                                    b in prop::array::uniform3(-10.0f64..10.0)) {
            let th = stress_tensor(&AntisymTensor::from_e_b(e, b));
            prop_assert_eq!(asymmetry(&th), 0.0);
            let scale = 1.0 + th.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
            prop_assert!(trace(&th).abs() < 1e-12 * scale);
        }

        #[test]
        fn lw_potential_is_boost_covariant(beta in prop::array::uniform3(-0.4f64..0.4),
                                           x in prop::array::uniform3(-2.0f64..2.0)) {
            let rest = static_charge(1.0);
            let xr = FourVector::new(1.0, x[0] + 3.0, x[1], x[2]);
            let u = lorentz_boost(FourVector::new(1.0, 0.0, 0.0, 0.0), beta).unwrap();
            let moving = Trajectory::uniform(FourVector::ZERO, u, 1.0, -60.0, 60.0, 241).unwrap();
            let expected = lorentz_boost(lw_potential(xr, &rest).unwrap(), beta).unwrap();
            let got = lw_potential(lorentz_boost(xr, beta).unwrap(), &moving).unwrap();
            prop_assert!((got - expected).max_abs() < 1e-8);
        }

        #[test]
        fn shift_identity_holds(a in prop::array::uniform3(-5.0f64..5.0), b in -3.0f64..3.0,
                                v in prop::array::uniform3(-0.5f64..0.5)) {
            let u = lorentz_boost(FourVector::new(1.3, 0.0, 0.0, 0.0), v).unwrap();
            let t = Trajectory::uniform(FourVector::new(0.0, 0.2, 0.1, -0.3), u, 1.0, -20.0, 20.0, 81).unwrap();
            let d = particle_dilatation_charge(&t, 0.0, [0.0; 3], 0.0).unwrap();
            let ds = particle_dilatation_charge(&t, 0.0, a, b).unwrap();
            let p = mechanical_momentum(&t, 0.0).unwrap();
            let r = dilatation_shift_check(ds, d, p, &[u.square()], a, &[b]).unwrap();
            prop_assert!(r <= 1e-6 * (1.0 + d.abs().max(ds.abs())) * 1e-3);
        }
    }
}
