//! Minkowski geometry with signature (+,−,−,−), c = 1, and the
//! uniform event lattice used for every grid integral and divergence.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, EcdError, Result};
use crate::numerics::CompensatedSum;

/// Diagonal of the metric g_{μν}.
pub const METRIC: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// Contravariant components x^μ, index 0 is time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FourVector(pub [f64; 4]);

impl FourVector {
    pub const ZERO: FourVector = FourVector([0.0; 4]);

    pub const fn new(t: f64, x: f64, y: f64, z: f64) -> Self {
        FourVector([t, x, y, z])
    }

    pub fn time(&self) -> f64 {
        self.0[0]
    }

    pub fn spatial(&self) -> [f64; 3] {
        [self.0[1], self.0[2], self.0[3]]
    }

    pub fn spatial_norm(&self) -> f64 {
        let [x, y, z] = self.spatial();
        (x * x + y * y + z * z).sqrt()
    }

    pub fn dot(&self, other: &FourVector) -> f64 {
        minkowski_dot(*self, *other)
    }

    /// Minkowski square u·u.
    pub fn square(&self) -> f64 {
        self.dot(self)
    }

    /// Covariant components x_μ = g_{μν} x^ν.
    pub fn lower(&self) -> FourVector {
        let mut out = *self;
        for (c, g) in out.0.iter_mut().zip(METRIC) {
            *c *= g;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl Index<usize> for FourVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for FourVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for FourVector {
    type Output = FourVector;
    fn add(self, o: FourVector) -> FourVector {
        FourVector(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

impl AddAssign for FourVector {
    fn add_assign(&mut self, o: FourVector) {
        for i in 0..4 {
            self.0[i] += o.0[i];
        }
    }
}

impl Sub for FourVector {
    type Output = FourVector;
    fn sub(self, o: FourVector) -> FourVector {
        FourVector(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }
}

impl Neg for FourVector {
    type Output = FourVector;
    fn neg(self) -> FourVector {
        FourVector(self.0.map(|c| -c))
    }
}

impl Mul<f64> for FourVector {
    type Output = FourVector;
    fn mul(self, k: f64) -> FourVector {
        FourVector(self.0.map(|c| c * k))
    }
}

impl Mul<FourVector> for f64 {
    type Output = FourVector;
    fn mul(self, v: FourVector) -> FourVector {
        v * self
    }
}

/// g_{μν}u^μ v^ν.
pub fn minkowski_dot(u: FourVector, v: FourVector) -> f64 {
    u.0[0] * v.0[0] - u.0[1] * v.0[1] - u.0[2] * v.0[2] - u.0[3] * v.0[3]
}

/// Active boost with velocity `beta`: the rest vector (1,0,0,0) maps to γ(1, β).
pub fn lorentz_boost(v: FourVector, beta: [f64; 3]) -> Result<FourVector> {
    let b2 = beta.iter().map(|b| b * b).sum::<f64>();
    if !(b2 < 1.0) {
        return Err(domain(format!("boost speed |beta| = {} must be < 1", b2.sqrt())));
    }
    if b2 == 0.0 {
        return Ok(v);
    }
    let gamma = 1.0 / (1.0 - b2).sqrt();
    let [x, y, z] = v.spatial();
    let bx = beta[0] * x + beta[1] * y + beta[2] * z;
    let t = v.0[0];
    let k = (gamma - 1.0) * bx / b2 + gamma * t;
    Ok(FourVector::new(
        gamma * (t + bx),
        x + k * beta[0],
        y + k * beta[1],
        z + k * beta[2],
    ))
}

/// Boost of every index of a contravariant rank-2 tensor.
pub fn boost_matrix(beta: [f64; 3]) -> Result<[[f64; 4]; 4]> {
    let mut m = [[0.0; 4]; 4];
    for j in 0..4 {
        let mut e = FourVector::ZERO;
        e.0[j] = 1.0;
        let col = lorentz_boost(e, beta)?;
        for i in 0..4 {
            m[i][j] = col.0[i];
        }
    }
    Ok(m)
}

/// Antisymmetric F^{μν} (both indices up).
///
/// Electric and magnetic parts follow F^{i0} = E^i and F^{ij} = −ε_{ijk}B^k,
/// so that γ̈^μ = qF^μ_ν γ̇^ν is the usual Lorentz force.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AntisymTensor {
    upper: [[f64; 4]; 4],
}

impl AntisymTensor {
    pub const ZERO: AntisymTensor = AntisymTensor { upper: [[0.0; 4]; 4] };

    /// Rejects any matrix that is not exactly antisymmetric.
    pub fn new(upper: [[f64; 4]; 4]) -> Result<Self> {
        for i in 0..4 {
            for j in 0..4 {
                if upper[i][j] != -upper[j][i] {
                    return Err(domain(format!(
                        "F[{i}][{j}] = {} is not minus F[{j}][{i}] = {}",
                        upper[i][j], upper[j][i]
                    )));
                }
            }
        }
        Ok(Self { upper })
    }

    /// Antisymmetric part ½(M − Mᵀ); exact antisymmetry by construction.
    pub fn antisymmetrize(m: [[f64; 4]; 4]) -> Self {
        let mut upper = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in (i + 1)..4 {
                let v = 0.5 * (m[i][j] - m[j][i]);
                upper[i][j] = v;
                upper[j][i] = -v;
            }
        }
        Self { upper }
    }

    pub fn from_e_b(e: [f64; 3], b: [f64; 3]) -> Self {
        let mut upper = [[0.0; 4]; 4];
        for i in 0..3 {
            upper[i + 1][0] = e[i];
            upper[0][i + 1] = -e[i];
        }
        upper[1][2] = -b[2];
        upper[2][1] = b[2];
        upper[2][3] = -b[0];
        upper[3][2] = b[0];
        upper[3][1] = -b[1];
        upper[1][3] = b[1];
        Self { upper }
    }

    pub fn electric(&self) -> [f64; 3] {
        [self.upper[1][0], self.upper[2][0], self.upper[3][0]]
    }

    pub fn magnetic(&self) -> [f64; 3] {
        [-self.upper[2][3], -self.upper[3][1], -self.upper[1][2]]
    }

    pub fn upper(&self) -> &[[f64; 4]; 4] {
        &self.upper
    }

    /// F^μ_ν = F^{μρ} g_{ρν}.
    pub fn mixed(&self) -> [[f64; 4]; 4] {
        let mut m = self.upper;
        for row in m.iter_mut() {
            for (c, g) in row.iter_mut().zip(METRIC) {
                *c *= g;
            }
        }
        m
    }

    /// F_{μν}.
    pub fn lower(&self) -> [[f64; 4]; 4] {
        let mut m = self.upper;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                *c *= METRIC[i] * METRIC[j];
            }
        }
        m
    }

    /// F_{μν}F^{μν} = 2(B² − E²).
    pub fn invariant_f2(&self) -> f64 {
        let low = self.lower();
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                acc += low[i][j] * self.upper[i][j];
            }
        }
        acc
    }

    /// F^μ_ν v^ν.
    pub fn apply(&self, v: FourVector) -> FourVector {
        let m = self.mixed();
        FourVector(std::array::from_fn(|i| {
            m[i][0] * v.0[0] + m[i][1] * v.0[1] + m[i][2] * v.0[2] + m[i][3] * v.0[3]
        }))
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            upper: self.upper.map(|r| r.map(|c| c * k)),
        }
    }

    pub fn boosted(&self, beta: [f64; 3]) -> Result<Self> {
        let l = boost_matrix(beta)?;
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        acc += l[i][a] * l[j][b] * self.upper[a][b];
                    }
                }
                out[i][j] = acc;
            }
        }
        Ok(Self::antisymmetrize(out))
    }

    pub fn max_abs(&self) -> f64 {
        self.upper
            .iter()
            .flatten()
            .fold(0.0, |m: f64, c| m.max(c.abs()))
    }
}

impl Add for AntisymTensor {
    type Output = AntisymTensor;
    fn add(self, o: AntisymTensor) -> AntisymTensor {
        let mut upper = self.upper;
        for i in 0..4 {
            for j in 0..4 {
                upper[i][j] += o.upper[i][j];
            }
        }
        AntisymTensor { upper }
    }
}

impl Neg for AntisymTensor {
    type Output = AntisymTensor;
    fn neg(self) -> AntisymTensor {
        self.scale(-1.0)
    }
}

/// Dilatation f(x) ↦ λ^d f(λ⁻¹x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleMap {
    lambda: f64,
    dimension: f64,
}

impl ScaleMap {
    pub fn new(lambda: f64, dimension: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(domain(format!("scale factor must be positive, got {lambda}")));
        }
        Ok(Self { lambda, dimension })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dimension(&self) -> f64 {
        self.dimension
    }

    /// self ∘ other; both must act on fields of the same dimension.
    pub fn compose(&self, other: &ScaleMap) -> Result<ScaleMap> {
        if self.dimension != other.dimension {
            return Err(domain("cannot compose scale maps of different dimension"));
        }
        ScaleMap::new(self.lambda * other.lambda, self.dimension)
    }

    pub fn prefactor(&self) -> f64 {
        self.lambda.powf(self.dimension)
    }

    pub fn pull_back(&self, x: FourVector) -> FourVector {
        x * (1.0 / self.lambda)
    }
}

/// Returns x ↦ λ^d f(λ⁻¹x).
pub fn scale_field<T, F>(f: F, map: ScaleMap) -> impl Fn(FourVector) -> T
where
    F: Fn(FourVector) -> T,
    T: Mul<f64, Output = T>,
{
    move |x| f(map.pull_back(x)) * map.prefactor()
}

/// Uniform lattice: point (i0,i1,i2,i3) sits at origin + i·spacing.
/// Index 0 (time) varies slowest in the flat storage order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventGrid {
    pub origin: FourVector,
    pub spacings: [f64; 4],
    pub extents: [usize; 4],
}

impl EventGrid {
    pub fn new(origin: FourVector, spacings: [f64; 4], extents: [usize; 4]) -> Result<Self> {
        if spacings.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(domain(format!("grid spacings must be positive, got {spacings:?}")));
        }
        if extents.iter().any(|n| *n == 0) {
            return Err(domain(format!("grid extents must be nonzero, got {extents:?}")));
        }
        Ok(Self {
            origin,
            spacings,
            extents,
        })
    }

    /// Grid centred on `centre` in space, with time starting at `t0`.
    pub fn centred(t0: f64, centre: [f64; 3], spacings: [f64; 4], extents: [usize; 4]) -> Result<Self> {
        let mut origin = FourVector::new(t0, 0.0, 0.0, 0.0);
        for a in 1..4 {
            origin.0[a] = centre[a - 1] - 0.5 * (extents[a] as f64 - 1.0) * spacings[a];
        }
        Self::new(origin, spacings, extents)
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> [usize; 4] {
        let e = self.extents;
        [e[1] * e[2] * e[3], e[2] * e[3], e[3], 1]
    }

    pub fn linear(&self, idx: [usize; 4]) -> usize {
        let s = self.strides();
        idx[0] * s[0] + idx[1] * s[1] + idx[2] * s[2] + idx[3] * s[3]
    }

    pub fn multi(&self, mut lin: usize) -> [usize; 4] {
        let s = self.strides();
        let mut out = [0; 4];
        for a in 0..4 {
            out[a] = lin / s[a];
            lin %= s[a];
        }
        out
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.origin.0[axis] + i as f64 * self.spacings[axis]
    }

    pub fn point(&self, idx: [usize; 4]) -> FourVector {
        FourVector(std::array::from_fn(|a| self.coordinate(a, idx[a])))
    }

    pub fn point_linear(&self, lin: usize) -> FourVector {
        self.point(self.multi(lin))
    }

    pub fn spatial_cell_volume(&self) -> f64 {
        self.spacings[1] * self.spacings[2] * self.spacings[3]
    }

    /// True when every axis has a neighbour on both sides.
    pub fn is_interior(&self, idx: [usize; 4]) -> bool {
        (0..4).all(|a| idx[a] >= 1 && idx[a] + 1 < self.extents[a])
    }

    /// Index of the time slice nearest to `t`, if inside the grid.
    pub fn slice_of(&self, t: f64) -> Option<usize> {
        let f = (t - self.origin.0[0]) / self.spacings[0];
        let i = f.round();
        if i < 0.0 || i >= self.extents[0] as f64 {
            None
        } else {
            Some(i as usize)
        }
    }

    /// Evaluates `f` at every point, in parallel, preserving storage order.
    pub fn map_points<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(FourVector) -> T + Sync,
    {
        (0..self.len())
            .into_par_iter()
            .map(|lin| f(self.point_linear(lin)))
            .collect()
    }
}

/// Four-vector samples on a grid (j^μ, b^μ, ξ^μ, ...).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurrentField {
    pub grid: EventGrid,
    pub values: Vec<FourVector>,
    pub label: String,
}

impl CurrentField {
    pub fn new(grid: EventGrid, values: Vec<FourVector>, label: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(domain(format!(
                "field has {} samples but grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(EcdError::Numeric {
                s: f64::NAN,
                detail: format!("non-finite current at grid point {bad}"),
            });
        }
        Ok(Self {
            grid,
            values,
            label: label.into(),
        })
    }

    pub fn zeros(grid: EventGrid, label: impl Into<String>) -> Self {
        Self {
            grid,
            values: vec![FourVector::ZERO; grid.len()],
            label: label.into(),
        }
    }

    /// Samples x ↦ j(x) on the grid (parallel over points).
    pub fn sample<F>(grid: EventGrid, label: impl Into<String>, f: F) -> Result<Self>
    where
        F: Fn(FourVector) -> FourVector + Sync,
    {
        let values = grid.map_points(f);
        Self::new(grid, values, label)
    }

    pub fn at(&self, idx: [usize; 4]) -> FourVector {
        self.values[self.grid.linear(idx)]
    }

    pub fn add(&self, other: &CurrentField, k: f64, label: impl Into<String>) -> Result<Self> {
        if self.grid != other.grid {
            return Err(domain("cannot combine currents on different grids"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a + *b * k)
            .collect();
        Self::new(self.grid, values, label)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| *v * k).collect(),
            label: self.label.clone(),
        }
    }
}

/// Scalar samples with an interior mask; boundary cells carry no
/// derivative information and are excluded from norms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridScalarField {
    pub grid: EventGrid,
    pub values: Vec<f64>,
    pub interior: Vec<bool>,
}

impl GridScalarField {
    pub fn interior_max_abs(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.interior)
            .filter(|(_, keep)| **keep)
            .fold(0.0, |m, (v, _)| m.max(v.abs()))
    }

    pub fn interior_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.interior)
            .filter(|(_, keep)| **keep)
            .map(|(v, _)| *v)
    }
}

/// Second-order central-difference ∂_μ j^μ.
pub fn grid_divergence(j: &CurrentField) -> Result<GridScalarField> {
    let grid = j.grid;
    if grid.extents.iter().any(|n| *n < 3) {
        return Err(domain(format!(
            "central differences need at least 3 points per axis, got {:?}",
            grid.extents
        )));
    }
    let strides = grid.strides();
    let mut values = vec![0.0; grid.len()];
    let mut interior = vec![false; grid.len()];
    for lin in 0..grid.len() {
        let idx = grid.multi(lin);
        if !grid.is_interior(idx) {
            continue;
        }
        let mut acc = 0.0;
        for a in 0..4 {
            let up = j.values[lin + strides[a]].0[a];
            let down = j.values[lin - strides[a]].0[a];
            acc += (up - down) / (2.0 * grid.spacings[a]);
        }
        values[lin] = acc;
        interior[lin] = true;
    }
    Ok(GridScalarField {
        grid,
        values,
        interior,
    })
}

/// Riemann sum of j⁰ over one time slice, times the spatial cell volume.
pub fn grid_charge(j: &CurrentField, time_slice: usize) -> Result<f64> {
    grid_component_charge(&j.grid, time_slice, |lin| j.values[lin].0[0])
}

/// Riemann sum over one slice of an arbitrary per-point density.
pub fn grid_component_charge<F: Fn(usize) -> f64>(
    grid: &EventGrid,
    time_slice: usize,
    density: F,
) -> Result<f64> {
    if time_slice >= grid.extents[0] {
        return Err(domain(format!(
            "time slice {time_slice} outside grid of {} slices",
            grid.extents[0]
        )));
    }
    let per_slice = grid.strides()[0];
    let start = time_slice * per_slice;
    let mut acc = CompensatedSum::new();
    for lin in start..start + per_slice {
        acc.add(density(lin));
    }
    Ok(acc.value() * grid.spatial_cell_volume())
}
