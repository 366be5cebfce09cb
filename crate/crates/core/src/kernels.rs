//! Continuum stable heat kernels and rescaled walk kernels.
//!
//! Both families are computed by Fourier inversion. On a periodic box of `N`
//! sites with spacing `ε` (length `L = Nε`), the walk kernel is the exact
//! torus inversion of `exp(−t ε^{-α} (1 − μ̂(z)))`, and the continuum kernel is
//! the box-periodized density `Σ_m p_t(x + mL)`, obtained exactly from
//! Poisson summation by folding the symbol `exp(−νt|z|^α)` onto the `N`
//! discrete frequencies. Wraparound therefore enters both kernels the same
//! way and normalization holds to rounding.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::output::Record;
use crate::quad::{geomspace, graded_breaks, GaussLegendre};
use crate::walk::WalkModel;

/// `exp(−νt Z^α)` is below this at the frequency cutoff.
pub const SYMBOL_FLOOR: f64 = 1e-17;

/// Largest number of folded frequency terms accepted by the grid inversion.
pub const MAX_FREQUENCY_TERMS: usize = 1 << 28;

/// Symmetric α-stable heat kernel with symbol `exp(−νt|z|^α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableKernel {
    pub alpha: f64,
    pub nu: f64,
}

impl StableKernel {
    pub fn new(alpha: f64, nu: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha <= 2.0) {
            return Err(invalid(format!("alpha must lie in (1, 2], got {alpha}")));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid(format!("nu must be positive, got {nu}")));
        }
        Ok(Self { alpha, nu })
    }

    /// The continuum limit of a walk model.
    pub fn for_walk(model: &WalkModel) -> Self {
        Self {
            alpha: model.alpha,
            nu: model.nu,
        }
    }

    fn symbol(&self, t: f64, z: f64) -> f64 {
        (-self.nu * t * z.abs().powf(self.alpha)).exp()
    }

    /// Frequency beyond which the symbol is below [`SYMBOL_FLOOR`].
    pub fn cutoff(&self, t: f64) -> f64 {
        (-SYMBOL_FLOOR.ln() / (self.nu * t)).powf(1.0 / self.alpha)
    }
}

/// `p_t(x) = (1/π) ∫_0^∞ cos(zx) exp(−νt z^α) dz` by graded Gauss–Legendre
/// panels; absolute error well below `1e-9`.
pub fn stable_density(kernel: &StableKernel, t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("stable density needs t > 0, got {t}")));
    }
    let zmax = kernel.cutoff(t);
    let x = x.abs();
    // at most a quarter turn of phase per panel
    let by_phase = if x > 0.0 {
        (zmax * x / (0.5 * PI)).ceil() as usize
    } else {
        0
    };
    let panels = by_phase.max(48);
    let rule = GaussLegendre::new(20);
    let breaks = graded_breaks(zmax, panels, 40);
    let v = rule.integrate_panels(&breaks, |z| (z * x).cos() * kernel.symbol(t, z));
    Ok(v / PI)
}

/// Inverse real DFT of an even spectrum: `out[j] = Σ_k spec[k] cos(2π jk / n)`.
fn even_inverse_dft(spec: &[f64]) -> Vec<f64> {
    let n = spec.len();
    let mut buf: Vec<Complex<f64>> = spec.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

fn check_power_of_two(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(invalid(format!("box size must be a power of two ≥ 2, got {n}")));
    }
    Ok(())
}

/// Signed lattice index of storage slot `j` on an `n`-site box.
pub fn signed_index(j: usize, n: usize) -> i64 {
    if j < n.div_ceil(2) {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Box-periodized `p_t` at `x = jε`, storage slot `j` holding signed index
/// [`signed_index`]`(j, n)`.
pub fn stable_density_grid(kernel: &StableKernel, t: f64, eps: f64, n: usize) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(invalid(format!("grid density needs t > 0, got {t}")));
    }
    if !(eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    check_power_of_two(n)?;
    let length = n as f64 * eps;
    let dz = 2.0 * PI / length;
    let zmax = kernel.cutoff(t);
    let terms = (zmax / dz).ceil() as usize + 1;
    if terms > MAX_FREQUENCY_TERMS {
        return Err(Error::CutoffInsufficient(format!(
            "{terms} frequency terms needed to reach exp(-nu t Z^alpha) < {SYMBOL_FLOOR:e}"
        )));
    }
    let mut folded = vec![0.0; n];
    folded[0] += 1.0;
    for k in 1..=terms {
        let s = kernel.symbol(t, k as f64 * dz);
        if s == 0.0 {
            break;
        }
        folded[k % n] += s;
        folded[(n - k % n) % n] += s;
    }
    let mut out = even_inverse_dft(&folded);
    for v in &mut out {
        *v /= length;
    }
    Ok(out)
}

/// `P_t^(ε)(jε)` on an `n`-site box.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernelTable {
    pub eps: f64,
    pub t: f64,
    pub n: usize,
    values: Vec<f64>,
}

impl DiscreteKernelTable {
    /// Value at signed lattice index `j` (wrapped), with rounding residue
    /// below zero clamped away.
    pub fn value(&self, j: i64) -> f64 {
        let idx = j.rem_euclid(self.n as i64) as usize;
        self.values[idx].max(0.0)
    }

    /// Raw storage, slot `j` holding signed index [`signed_index`]`(j, n)`.
    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    /// Clamped values in storage order.
    pub fn clamped(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.max(0.0)).collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `Σ_j P(jε)²`.
    pub fn collision_sum(&self) -> f64 {
        self.values.iter().map(|v| v.max(0.0).powi(2)).sum()
    }

    /// Circular convolution with another table on the same box.
    pub fn convolve(&self, other: &DiscreteKernelTable) -> Result<Vec<f64>> {
        if self.n != other.n {
            return Err(invalid("tables live on different boxes"));
        }
        Ok(circular_convolve(&self.values, &other.values))
    }
}

/// Circular convolution `(a ⊛ b)[j] = Σ_i a[i] b[j − i]` via FFT.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    assert_eq!(n, b.len());
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    inv.process(&mut fa);
    fa.iter().map(|c| c.re / n as f64).collect()
}

/// Torus Fourier inversion of the rate-`ε^{-α}` walk semigroup:
/// `values[j] = (1/N) Σ_k exp(−t ε^{-α} (1 − μ̂(z_k))) cos(j z_k)`, `z_k = 2πk/N`.
pub fn discrete_transition(model: &WalkModel, eps: f64, t: f64, n: usize) -> Result<DiscreteKernelTable> {
    let symbol = model.torus_symbol(n)?;
    discrete_transition_from_symbol(&symbol, model.alpha, eps, t)
}

/// As [`discrete_transition`] with a precomputed [`WalkModel::torus_symbol`].
pub fn discrete_transition_from_symbol(symbol: &[f64], alpha: f64, eps: f64, t: f64) -> Result<DiscreteKernelTable> {
    let n = symbol.len();
    check_power_of_two(n)?;
    if !(eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be nonnegative, got {t}")));
    }
    let values = if t == 0.0 {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        v
    } else {
        let rate = t * eps.powf(-alpha);
        let spec: Vec<f64> = symbol.iter().map(|s| (-rate * s).exp()).collect();
        even_inverse_dft(&spec).into_iter().map(|v| v / n as f64).collect()
    };
    Ok(DiscreteKernelTable { eps, t, n, values })
}

/// `(∫ p_t(y)² dy, p_{2t}(0))`.
///
/// The left side is a space-domain Riemann sum over a fine, very wide grid of
/// kernel samples; the right side is a pointwise frequency quadrature.
pub fn l2_kernel_identity(kernel: &StableKernel, t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(invalid(format!("t must be positive, got {t}")));
    }
    let spacing = PI / kernel.cutoff(t);
    let grid = stable_density_grid(kernel, t, spacing, 1 << 20)?;
    let lhs = spacing * crate::quad::pairwise_sum(&grid.iter().map(|v| v * v).collect::<Vec<_>>());
    let rhs = stable_density(kernel, 2.0 * t, 0.0)?;
    Ok((lhs, rhs))
}

/// Identity checks on the continuum kernel at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheckReport {
    pub alpha: f64,
    pub nu: f64,
    pub t: f64,
    pub eps: f64,
    pub sites: usize,
    /// `|ε Σ_j p_t(jε) − 1|` on the box.
    pub normalization_error: f64,
    pub l2_lhs: f64,
    pub l2_rhs: f64,
    pub l2_relative_error: f64,
    /// `sup_j |ε (p_{t/2} ⊛ p_{t/2})(jε) − p_t(jε)|`.
    pub semigroup_error: f64,
    /// Sup distance to the periodized Gaussian; `α = 2` only.
    pub gaussian_error: Option<f64>,
}

impl KernelCheckReport {
    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push("alpha", self.alpha);
        r.push("nu", self.nu);
        r.push("t", self.t);
        r.push("eps", self.eps);
        r.push("sites", self.sites);
        r.push("normalization_error", self.normalization_error);
        r.push("l2_lhs", self.l2_lhs);
        r.push("l2_rhs", self.l2_rhs);
        r.push("l2_relative_error", self.l2_relative_error);
        r.push("semigroup_error", self.semigroup_error);
        r.push("gaussian_error", self.gaussian_error.unwrap_or(f64::NAN));
        r
    }
}

pub const KERNEL_CHECK_HEADER: [&str; 11] = [
    "alpha",
    "nu",
    "t",
    "eps",
    "sites",
    "normalization_error",
    "l2_lhs",
    "l2_rhs",
    "l2_relative_error",
    "semigroup_error",
    "gaussian_error",
];

/// Normalization, `L²`, semigroup and (for `α = 2`) Gaussian checks.
pub fn kernel_check(kernel: &StableKernel, t: f64, eps: f64, n: usize) -> Result<KernelCheckReport> {
    let full = stable_density_grid(kernel, t, eps, n)?;
    let half = stable_density_grid(kernel, 0.5 * t, eps, n)?;
    let normalization_error = (eps * crate::quad::pairwise_sum(&full) - 1.0).abs();
    let semigroup_error = circular_convolve(&half, &half)
        .iter()
        .zip(&full)
        .map(|(c, f)| (eps * c - f).abs())
        .fold(0.0, f64::max);
    let (l2_lhs, l2_rhs) = l2_kernel_identity(kernel, t)?;
    let gaussian_error = (kernel.alpha == 2.0).then(|| {
        let length = n as f64 * eps;
        let var4 = 4.0 * kernel.nu * t;
        let reach = (6.0 * var4.sqrt() / length).ceil() as i64 + 1;
        (0..n)
            .map(|j| {
                let x = signed_index(j, n) as f64 * eps;
                let exact: f64 = (-reach..=reach)
                    .map(|m| {
                        let y = x + m as f64 * length;
                        (-y * y / var4).exp() / (PI * var4).sqrt()
                    })
                    .sum();
                (full[j] - exact).abs()
            })
            .fold(0.0, f64::max)
    });
    Ok(KernelCheckReport {
        alpha: kernel.alpha,
        nu: kernel.nu,
        t,
        eps,
        sites: n,
        normalization_error,
        l2_lhs,
        l2_rhs,
        l2_relative_error: ((l2_lhs - l2_rhs) / l2_rhs).abs(),
        semigroup_error,
        gaussian_error,
    })
}

/// Which branch of the local CLT bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcltRegime {
    /// `t ≥ K ε^α |ln ε|^{(a+α)/a}`.
    LargeTime,
    SmallTime,
}

impl LcltRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            LcltRegime::LargeTime => "large_t",
            LcltRegime::SmallTime => "small_t",
        }
    }
}

/// Constants `(K, C)` of the local CLT bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcltConstants {
    pub k: f64,
    pub c: f64,
}

impl LcltConstants {
    pub const DEFAULT_K: f64 = 64.0;

    /// `C` fitted once: the ratio of the measured sup error to the large-time
    /// bound shape for the simple walk at `ε = 0.2`, `t = 1`.
    pub fn calibrated() -> Result<Self> {
        let walk = crate::walk::make_simple_walk();
        let (eps, t) = (0.2, 1.0);
        let sup = lclt_sup_difference(&walk, eps, t, 1 << 10)?.0;
        let c = sup / large_time_shape(&walk, eps, t, (walk.a + walk.alpha) / walk.alpha);
        Ok(Self { k: Self::DEFAULT_K, c })
    }
}

fn large_time_shape(model: &WalkModel, eps: f64, t: f64, log_exponent: f64) -> f64 {
    let (a, alpha) = (model.a, model.alpha);
    eps.powf(a) * eps.ln().abs().powf(log_exponent) / t.powf((a + 1.0) / alpha)
}

/// Local CLT comparison of `ε^{-1} P_t^(ε)` against `p_t` on one box.
#[derive(Debug, Clone, PartialEq)]
pub struct LcltErrorReport {
    pub eps: f64,
    pub t: f64,
    pub sites: usize,
    pub sup_error: f64,
    /// Bound with `|ln ε|^{(a+α)/α}` in the large-time branch.
    pub bound_value: f64,
    /// Same bound with `|ln ε|^{(a+α)/a}` in the large-time branch.
    pub bound_value_alt: f64,
    pub lambda: f64,
    pub regime: LcltRegime,
    /// `K ε^α |ln ε|^{(a+α)/a}`.
    pub threshold: f64,
    /// `K ε^α |ln ε|^{(a+α)/α}`.
    pub threshold_alt: f64,
    /// Largest `r₀ ≤ π` with `1 − μ̂(w) ≥ ν|w|^α / 2` on `|w| ≤ r₀`.
    pub r0: f64,
    /// `sup_{r₀ ≤ |z| ≤ π} μ̂(z)`.
    pub theta: f64,
    pub constants: LcltConstants,
}

impl LcltErrorReport {
    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push("eps", self.eps);
        r.push("t", self.t);
        r.push("sites", self.sites);
        r.push("sup_error", self.sup_error);
        r.push("bound_value", self.bound_value);
        r.push("bound_value_alt", self.bound_value_alt);
        r.push("lambda", self.lambda);
        r.push("regime", self.regime.as_str());
        r.push("threshold", self.threshold);
        r.push("threshold_alt", self.threshold_alt);
        r.push("r0", self.r0);
        r.push("theta", self.theta);
        r.push("K", self.constants.k);
        r.push("C", self.constants.c);
        r
    }
}

/// Relative kernel mass tolerated at the box edge (edge value over peak).
pub const EDGE_TOLERANCE: f64 = 1e-6;

fn lclt_sup_difference(model: &WalkModel, eps: f64, t: f64, n: usize) -> Result<(f64, DiscreteKernelTable, Vec<f64>)> {
    let table = discrete_transition(model, eps, t, n)?;
    let cont = stable_density_grid(&StableKernel::for_walk(model), t, eps, n)?;
    let edge = n / 2;
    let peak_d = table.value(0) / eps;
    let peak_c = cont[0];
    let edge_d = table.value(edge as i64) / eps;
    let edge_c = cont[edge].abs();
    if edge_d > EDGE_TOLERANCE * peak_d || edge_c > EDGE_TOLERANCE * peak_c {
        return Err(Error::BoundaryMass(format!(
            "edge/peak ratios {:.3e} (walk) and {:.3e} (stable) exceed {EDGE_TOLERANCE:e}",
            edge_d / peak_d,
            edge_c / peak_c
        )));
    }
    let sup = table
        .raw()
        .iter()
        .zip(&cont)
        .map(|(p_disc, p_cont)| (p_disc.max(0.0) / eps - p_cont).abs())
        .fold(0.0, f64::max);
    Ok((sup, table, cont))
}

/// `sup_x |ε^{-1} P_t^(ε)(x) − p_t(x)|` with the matching bound branch.
pub fn lclt_sup_error(
    model: &WalkModel,
    eps: f64,
    t: f64,
    n: usize,
    constants: LcltConstants,
) -> Result<LcltErrorReport> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(t >= 0.0) {
        return Err(invalid("t must be nonnegative"));
    }
    let (a, alpha) = (model.a, model.alpha);
    let log_eps = eps.ln().abs();
    let threshold = constants.k * eps.powf(alpha) * log_eps.powf((a + alpha) / a);
    let threshold_alt = constants.k * eps.powf(alpha) * log_eps.powf((a + alpha) / alpha);
    let (r0, theta) = frequency_split(model);
    let lambda = ((10.0 + 2.0 * a) * log_eps / (model.nu * t)).powf(1.0 / alpha);
    let regime = if t >= threshold {
        LcltRegime::LargeTime
    } else {
        LcltRegime::SmallTime
    };
    let sup_error = if t == 0.0 {
        f64::INFINITY
    } else {
        lclt_sup_difference(model, eps, t, n)?.0
    };
    let (bound_value, bound_value_alt) = match regime {
        LcltRegime::LargeTime => (
            constants.c * large_time_shape(model, eps, t, (a + alpha) / alpha),
            constants.c * large_time_shape(model, eps, t, (a + alpha) / a),
        ),
        LcltRegime::SmallTime => {
            let b = constants.c * (t.powf(-1.0 / alpha) + 1.0 / eps);
            (b, b)
        }
    };
    Ok(LcltErrorReport {
        eps,
        t,
        sites: n,
        sup_error,
        bound_value,
        bound_value_alt,
        lambda,
        regime,
        threshold,
        threshold_alt,
        r0,
        theta,
        constants,
    })
}

/// `(r₀, θ)` of the three-region frequency split, found on a grid with a
/// bisection refinement of the first failure of `1 − μ̂(w) ≥ ν|w|^α / 2`.
pub fn frequency_split(model: &WalkModel) -> (f64, f64) {
    let holds = |w: f64| model.one_minus_char_fn(w) >= 0.5 * model.nu * w.powf(model.alpha);
    let steps = 2048;
    let mut r0 = PI;
    for i in 1..=steps {
        let w = PI * i as f64 / steps as f64;
        if !holds(w) {
            let (mut lo, mut hi) = (PI * (i - 1) as f64 / steps as f64, w);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if holds(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            r0 = lo;
            break;
        }
    }
    let theta = (0..=steps)
        .map(|i| r0 + (PI - r0) * i as f64 / steps as f64)
        .map(|z| 1.0 - model.one_minus_char_fn(z))
        .fold(f64::NEG_INFINITY, f64::max);
    (r0, theta)
}

/// Number of log-spaced time nodes used by [`kernel_l2_difference`].
pub const L2_TIME_NODES: usize = 64;

/// `∫_{ε^α}^T dt Σ_j ε |ε^{-1} P_t^(ε)(jε) − p_t(jε)|²` by trapezoidal
/// quadrature in `ln t` over [`L2_TIME_NODES`] nodes.
pub fn kernel_l2_difference(model: &WalkModel, eps: f64, horizon: f64, n: usize) -> Result<f64> {
    let start = eps.powf(model.alpha);
    if !(horizon > start) {
        return Err(invalid(format!("horizon {horizon} must exceed eps^alpha = {start}")));
    }
    let symbol = model.torus_symbol(n)?;
    let kernel = StableKernel::for_walk(model);
    let times = geomspace(start, horizon, L2_TIME_NODES);
    let mut f = Vec::with_capacity(times.len());
    for &t in &times {
        let table = discrete_transition_from_symbol(&symbol, model.alpha, eps, t)?;
        let cont = stable_density_grid(&kernel, t, eps, n)?;
        let s: f64 = table
            .raw()
            .iter()
            .zip(&cont)
            .map(|(d, c)| (d.max(0.0) / eps - c).powi(2))
            .sum();
        f.push(eps * s * t);
    }
    let mut acc = 0.0;
    for i in 1..times.len() {
        acc += 0.5 * (f[i] + f[i - 1]) * (times[i].ln() - times[i - 1].ln());
    }
    Ok(acc)
}

/// `ε^{-1} ∫_0^t Σ_j P_s^(ε)(jε)² ds` on the whole lattice, evaluated as
/// `(ε^{α−1}/2π) ∫_0^π (1 − e^{−2t(1−μ̂(ξ))/ε^α}) / (1 − μ̂(ξ)) dξ`.
pub fn green_function_bound(model: &WalkModel, eps: f64, t: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    if !(t >= 0.0) {
        return Err(invalid("t must be nonnegative"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let rate = 2.0 * t * eps.powf(-model.alpha);
    let rule = GaussLegendre::new(20);
    let breaks = graded_breaks(PI, 64, 40);
    let integral = rule.integrate_panels(&breaks, |xi| {
        let y = model.one_minus_char_fn(xi);
        if y == 0.0 {
            rate
        } else {
            -(-rate * y).exp_m1() / y
        }
    });
    Ok(eps.powf(model.alpha - 1.0) * integral / (2.0 * PI))
}

/// `Σ_j P_s^(ε)(jε)²` on the whole lattice, `(1/2π) ∫_{-π}^{π} e^{−2s(1−μ̂)/ε^α}`.
pub fn collision_probability(model: &WalkModel, eps: f64, s: f64) -> f64 {
    let rate = 2.0 * s * eps.powf(-model.alpha);
    let rule = GaussLegendre::new(20);
    let breaks = graded_breaks(PI, 64, 40);
    rule.integrate_panels(&breaks, |xi| (-rate * model.one_minus_char_fn(xi)).exp()) / PI
}

/// Rows `(j, x, P, p, diff)` for CSV export of a kernel comparison.
pub fn kernel_table_records(table: &DiscreteKernelTable, continuum: &[f64]) -> Vec<Record> {
    let n = table.n;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| signed_index(j, n));
    order
        .into_iter()
        .map(|j| {
            let idx = signed_index(j, n);
            let p_disc = table.value(idx);
            let mut r = Record::new();
            r.push("j", idx);
            r.push("x", idx as f64 * table.eps);
            r.push("P", p_disc);
            r.push("p", continuum[j]);
            r.push("diff", p_disc / table.eps - continuum[j]);
            r
        })
        .collect()
}

pub const KERNEL_TABLE_HEADER: [&str; 5] = ["j", "x", "P", "p", "diff"];
