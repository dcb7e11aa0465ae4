//! Globally adaptive Gauss–Kronrod (7/15) quadrature for complex
//! integrands, with phase-based pre-subdivision for oscillatory ones.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{EcdError, Result};
use crate::numerics::CompensatedSum;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Upper bound on the number of panels after subdivision.
    pub max_panels: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_panels: 4000,
        }
    }
}

impl QuadratureOptions {
    pub fn with_tolerances(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

/// Value plus diagnostics that end up in run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadrature {
    pub value: Complex64,
    pub error: f64,
    pub panels: usize,
    pub evaluations: usize,
}

impl Quadrature {
    pub fn zero() -> Self {
        Self {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            panels: 0,
            evaluations: 0,
        }
    }

    pub fn combine(self, other: Quadrature) -> Quadrature {
        Quadrature {
            value: self.value + other.value,
            error: self.error + other.error,
            panels: self.panels + other.panels,
            evaluations: self.evaluations + other.evaluations,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn gk15<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += pair * WGK[j];
        if j % 2 == 1 {
            gauss += pair * WG[j / 2];
        }
    }
    let value = kronrod * h;
    let error = ((kronrod - gauss) * h).norm();
    Panel { a, b, value, error }
}

/// Integrates `f` over the panels delimited by `breaks` (sorted), refining
/// the worst panel until the global error meets the tolerance.
pub fn integrate_breaks<F>(f: F, breaks: &[f64], opts: &QuadratureOptions) -> Result<Quadrature>
where
    F: Fn(f64) -> Complex64,
{
    if breaks.len() < 2 {
        return Ok(Quadrature::zero());
    }
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(gk15(&f, w[0], w[1]));
        }
    }
    let mut evaluations = 15 * heap.len();
    // Running sums only decide when to look; the reported totals are
    // always re-summed in a fixed order.
    let (mut run_value, mut run_error) = totals(&heap);
    loop {
        let target = opts.abs_tol.max(opts.rel_tol * run_value.norm());
        if run_error <= target {
            let (value, error) = totals(&heap);
            let target = opts.abs_tol.max(opts.rel_tol * value.norm());
            if error <= target {
                return Ok(Quadrature {
                    value,
                    error,
                    panels: heap.len(),
                    evaluations,
                });
            }
            (run_value, run_error) = (value, error);
        }
        let error = run_error;
        if heap.len() >= opts.max_panels {
            return Err(EcdError::Accuracy {
                context: format!("adaptive quadrature on [{}, {}]", breaks[0], breaks[breaks.len() - 1]),
                achieved: error,
                requested: target,
            });
        }
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // Panel cannot be split further in floating point.
            let (value, error) = totals(&heap);
            let value = value + worst.value;
            let error = error + worst.error;
            return Err(EcdError::Accuracy {
                context: format!("panel [{}, {}] exhausted float resolution", worst.a, worst.b),
                achieved: error,
                requested: opts.abs_tol.max(opts.rel_tol * value.norm()),
            });
        }
        let (left, right) = (gk15(&f, worst.a, mid), gk15(&f, mid, worst.b));
        run_value += left.value + right.value - worst.value;
        run_error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        evaluations += 30;
    }
}

fn totals(heap: &BinaryHeap<Panel>) -> (Complex64, f64) {
    let mut panels: Vec<&Panel> = heap.iter().collect();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let (mut re, mut im, mut err) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    for p in panels {
        re.add(p.value.re);
        im.add(p.value.im);
        err.add(p.error);
    }
    (Complex64::new(re.value(), im.value()), err.value())
}

pub fn integrate<F>(f: F, a: f64, b: f64, opts: &QuadratureOptions) -> Result<Quadrature>
where
    F: Fn(f64) -> Complex64,
{
    if a == b {
        return Ok(Quadrature::zero());
    }
    if a > b {
        let q = integrate(f, b, a, opts)?;
        return Ok(Quadrature { value: -q.value, ..q });
    }
    integrate_breaks(f, &[a, b], opts)
}

pub fn integrate_real<F>(f: F, a: f64, b: f64, opts: &QuadratureOptions) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let q = integrate(|x| Complex64::new(f(x), 0.0), a, b, opts)?;
    Ok((q.value.re, q.error))
}

/// Breakpoints on [a, b] such that the unwrapped argument of `f` changes by
/// at most `max_phase` per panel, judged on `samples` equispaced probes.
pub fn phase_breaks<F>(f: &F, a: f64, b: f64, samples: usize, max_phase: f64) -> Vec<f64>
where
    F: Fn(f64) -> Complex64,
{
    let n = samples.max(2);
    let xs: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    phase_breaks_at(f, &xs, max_phase)
}

/// As [`phase_breaks`] on an explicit increasing probe list whose ends are
/// the integration limits.
pub fn phase_breaks_at<F>(f: &F, probes: &[f64], max_phase: f64) -> Vec<f64>
where
    F: Fn(f64) -> Complex64,
{
    let (Some(&a), Some(&b)) = (probes.first(), probes.last()) else {
        return Vec::new();
    };
    let n = probes.len() - 1;
    let mut breaks = vec![a];
    let mut prev_arg: Option<f64> = None;
    let mut acc = 0.0;
    for (i, &x) in probes.iter().enumerate() {
        let v = f(x);
        if v.norm() == 0.0 || !v.is_finite() {
            prev_arg = None;
            continue;
        }
        let arg = v.arg();
        if let Some(p) = prev_arg {
            let mut d = arg - p;
            while d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            }
            while d < -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            acc += d.abs();
            if acc >= max_phase && i < n {
                breaks.push(x);
                acc = 0.0;
            }
        }
        prev_arg = Some(arg);
    }
    breaks.push(b);
    breaks
}

/// Adaptive integration over explicit panels, each further split so it
/// carries at most a quarter turn of phase on `probes_per_panel` probes.
pub fn integrate_oscillatory_probes<F>(f: F, probes: &[f64], opts: &QuadratureOptions) -> Result<Quadrature>
where
    F: Fn(f64) -> Complex64,
{
    let breaks = phase_breaks_at(&f, probes, FRAC_PI_2);
    let opts = QuadratureOptions {
        max_panels: opts.max_panels.max(4 * breaks.len()),
        ..*opts
    };
    integrate_breaks(f, &breaks, &opts)
}

/// Adaptive integration after splitting so each panel carries at most a
/// quarter turn of phase.
pub fn integrate_oscillatory<F>(f: F, a: f64, b: f64, probes: usize, opts: &QuadratureOptions) -> Result<Quadrature>
where
    F: Fn(f64) -> Complex64,
{
    if a >= b {
        return integrate(f, a, b, opts);
    }
    let breaks = phase_breaks(&f, a, b, probes, FRAC_PI_2);
    let opts = QuadratureOptions {
        max_panels: opts.max_panels.max(4 * breaks.len()),
        ..*opts
    };
    integrate_breaks(f, &breaks, &opts)
}

/// Result of [`integrate_vector`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VectorQuadrature<const N: usize> {
    #[serde(with = "serde_arrays")]
    pub value: [f64; N],
    pub error: f64,
    pub panels: usize,
    pub evaluations: usize,
}

mod serde_arrays {
    use serde::ser::{Serialize, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[f64; N], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }
}

#[derive(Debug, Clone, Copy)]
struct VPanel<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: f64,
}

impl<const N: usize> PartialEq for VPanel<N> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<const N: usize> Eq for VPanel<N> {}
impl<const N: usize> PartialOrd for VPanel<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for VPanel<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn gk15_vec<const N: usize, F>(f: &F, a: f64, b: f64) -> Result<VPanel<N>>
where
    F: Fn(f64) -> Result<[f64; N]>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kronrod = fc.map(|v| v * WGK[7]);
    let mut gauss = fc.map(|v| v * WG[3]);
    for j in 0..7 {
        let dx = h * XGK[j];
        let (lo, hi) = (f(c - dx)?, f(c + dx)?);
        for k in 0..N {
            let pair = lo[k] + hi[k];
            kronrod[k] += pair * WGK[j];
            if j % 2 == 1 {
                gauss[k] += pair * WG[j / 2];
            }
        }
    }
    let mut error: f64 = 0.0;
    for k in 0..N {
        error = error.max(((kronrod[k] - gauss[k]) * h).abs());
    }
    Ok(VPanel {
        a,
        b,
        value: kronrod.map(|v| v * h),
        error,
    })
}

fn vtotals<const N: usize>(heap: &BinaryHeap<VPanel<N>>) -> ([f64; N], f64) {
    let mut panels: Vec<&VPanel<N>> = heap.iter().collect();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut sums = [CompensatedSum::new(); N];
    let mut err = CompensatedSum::new();
    for p in panels {
        for k in 0..N {
            sums[k].add(p.value[k]);
        }
        err.add(p.error);
    }
    (sums.map(|s| s.value()), err.value())
}

/// Adaptive GK15 for a vector integrand sharing one set of evaluations.
/// The error is the max-norm over components; the tolerance is relative to
/// the max-norm of the running total.
pub fn integrate_vector<const N: usize, F>(f: F, breaks: &[f64], opts: &QuadratureOptions) -> Result<VectorQuadrature<N>>
where
    F: Fn(f64) -> Result<[f64; N]>,
{
    if breaks.len() < 2 {
        return Ok(VectorQuadrature {
            value: [0.0; N],
            error: 0.0,
            panels: 0,
            evaluations: 0,
        });
    }
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(gk15_vec(&f, w[0], w[1])?);
        }
    }
    let mut evaluations = 15 * heap.len();
    let scale_of = |v: &[f64; N]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (mut run_value, mut run_error) = vtotals(&heap);
    loop {
        let mut target = opts.abs_tol.max(opts.rel_tol * scale_of(&run_value));
        if run_error <= target {
            let (value, error) = vtotals(&heap);
            target = opts.abs_tol.max(opts.rel_tol * scale_of(&value));
            if error <= target {
                return Ok(VectorQuadrature {
                    value,
                    error,
                    panels: heap.len(),
                    evaluations,
                });
            }
            (run_value, run_error) = (value, error);
        }
        let error = run_error;
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if heap.len() + 1 >= opts.max_panels || !(mid > worst.a && mid < worst.b) {
            return Err(EcdError::Accuracy {
                context: format!("vector quadrature on [{}, {}]", breaks[0], breaks[breaks.len() - 1]),
                achieved: error,
                requested: target,
            });
        }
        let (left, right) = (gk15_vec(&f, worst.a, mid)?, gk15_vec(&f, mid, worst.b)?);
        for k in 0..N {
            run_value[k] += left.value[k] + right.value[k] - worst.value[k];
        }
        run_error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        evaluations += 30;
    }
}

/// Breakpoints on the probe list such that the real phase proxy `theta`
/// advances by at most a quarter turn per panel (interpolating linearly
/// between probes where it moves faster).
pub fn proxy_breaks<F: Fn(f64) -> f64>(theta: F, probes: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(probes.len());
    let Some(&first) = probes.first() else {
        return out;
    };
    out.push(first);
    let mut prev = theta(first);
    for w in probes.windows(2) {
        let next = theta(w[1]);
        let turns = ((next - prev).abs() / FRAC_PI_2).ceil();
        if turns.is_finite() && turns > 1.0 {
            let n = turns.min(1e6) as usize;
            for k in 1..n {
                out.push(w[0] + (w[1] - w[0]) * k as f64 / n as f64);
            }
        }
        if w[1] > *out.last().expect("nonempty") {
            out.push(w[1]);
        }
        prev = next;
    }
    out
}
