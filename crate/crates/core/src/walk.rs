//! Symmetric random walks on `Z`: the jump law, its characteristic function,
//! the generator, and a numerical check of the small-frequency expansion
//! `1 − μ̂(z) = ν|z|^α + O(|z|^{α+a})`.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::quad::{geomspace, one_minus_cos_moment, zeta};

/// Number of directly summed terms used for `ζ(α + 1)`.
pub const ZETA_TERMS: usize = 100_000;

/// Symmetric jump law on `Z \ {0}`.
///
/// Only the positive half is stored: `half[j - 1] = q(j) = q(-j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DislocationMeasure {
    half: Vec<f64>,
    aliased: bool,
}

impl DislocationMeasure {
    /// Builds a measure from one-sided weights `q(1), …, q(J)`.
    pub fn from_half_weights(half: Vec<f64>) -> Result<Self> {
        if half.is_empty() {
            return Err(invalid("dislocation measure needs at least one atom"));
        }
        if half.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total = 2.0 * half.iter().rev().sum::<f64>();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("total mass {total} is not 1")));
        }
        Ok(Self { half, aliased: false })
    }

    /// Largest jump size `J` with `q(J) > 0` allowed.
    pub fn truncation_radius(&self) -> usize {
        self.half.len()
    }

    /// Whether tail mass was wrapped onto a periodic box. Measures built here
    /// always renormalize instead, so this is `false`.
    pub fn aliased(&self) -> bool {
        self.aliased
    }

    /// `q(j)` for any integer `j`.
    pub fn mass(&self, j: i64) -> f64 {
        let k = j.unsigned_abs() as usize;
        if k == 0 || k > self.half.len() {
            0.0
        } else {
            self.half[k - 1]
        }
    }

    pub fn total_mass(&self) -> f64 {
        2.0 * self.half.iter().rev().sum::<f64>()
    }

    /// `(j, q(j))` for `j = 1..=J`.
    pub fn positive_atoms(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.half.iter().enumerate().map(|(i, &w)| (i + 1, w))
    }

    /// The measure pushed onto `Z / nZ`; index `r` holds the mass of residue `r`.
    pub fn on_torus(&self, n: usize) -> Result<Vec<f64>> {
        if n < 2 * self.half.len() {
            return Err(invalid(format!(
                "box of {n} sites cannot hold jumps of size {}",
                self.half.len()
            )));
        }
        let mut out = vec![0.0; n];
        for (j, w) in self.positive_atoms() {
            out[j % n] += w;
            out[(n - j % n) % n] += w;
        }
        Ok(out)
    }
}

/// Which family a walk was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkFamily {
    Simple,
    StableTail,
}

/// A symmetric continuous-time walk with rate-one jumps drawn from `measure`,
/// together with its small-frequency parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkModel {
    pub alpha: f64,
    pub nu: f64,
    pub a: f64,
    pub family: WalkFamily,
    pub measure: DislocationMeasure,
    /// Fraction of the untruncated law removed by truncation (0 for finite laws).
    pub truncated_mass: f64,
}

/// Nearest-neighbour walk: `q(±1) = 1/2`, `α = 2`, `ν = 1/2`, `a = 2`.
pub fn make_simple_walk() -> WalkModel {
    WalkModel {
        alpha: 2.0,
        nu: 0.5,
        a: 2.0,
        family: WalkFamily::Simple,
        measure: DislocationMeasure::from_half_weights(vec![0.5]).expect("valid"),
        truncated_mass: 0.0,
    }
}

/// Heavy-tailed walk with `q(j) ∝ |j|^{-(α+1)}` for `1 ≤ |j| ≤ truncation_radius`.
///
/// The tail beyond the radius is removed and its mass spread proportionally
/// over the retained atoms. `ν` is the quadrature value of
/// `ζ(α+1)^{-1} ∫_0^∞ (1 − cos x) x^{-α-1} dx` and `a = 2 − α`.
pub fn make_stable_tail_walk(alpha: f64, truncation_radius: usize, box_size: usize) -> Result<WalkModel> {
    build_stable_tail(alpha, truncation_radius, box_size, false)
}

/// As [`make_stable_tail_walk`], but rejects radii that keep less than
/// `1 − 1e-9` of the untruncated mass.
pub fn make_stable_tail_walk_strict(alpha: f64, truncation_radius: usize, box_size: usize) -> Result<WalkModel> {
    build_stable_tail(alpha, truncation_radius, box_size, true)
}

fn build_stable_tail(alpha: f64, radius: usize, box_size: usize, strict: bool) -> Result<WalkModel> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(invalid(format!("stable-tail walk needs 1 < alpha < 2, got {alpha}")));
    }
    if radius < 2 {
        return Err(invalid("truncation radius must be at least 2"));
    }
    if box_size < 2 * radius {
        return Err(invalid(format!(
            "box of {box_size} sites is smaller than twice the radius {radius}"
        )));
    }
    let z = zeta(alpha + 1.0, ZETA_TERMS);
    let raw: Vec<f64> = (1..=radius).map(|j| (j as f64).powf(-alpha - 1.0)).collect();
    let kept: f64 = raw.iter().rev().sum();
    let truncated_mass = 1.0 - kept / z;
    if strict && truncated_mass > 1e-9 {
        return Err(invalid(format!(
            "radius {radius} drops {truncated_mass:e} of the mass (strict limit 1e-9)"
        )));
    }
    let half: Vec<f64> = raw.iter().map(|w| w / (2.0 * kept)).collect();
    let measure = DislocationMeasure::from_half_weights(half)?;
    let nu = one_minus_cos_moment(alpha) / z;
    Ok(WalkModel {
        alpha,
        nu,
        a: 2.0 - alpha,
        family: WalkFamily::StableTail,
        measure,
        truncated_mass,
    })
}

impl WalkModel {
    /// `1 − μ̂(z) = Σ_j 4 q(j) sin²(jz/2)`, free of cancellation near zero.
    pub fn one_minus_char_fn(&self, z: f64) -> f64 {
        let mut acc = 0.0;
        for (i, w) in self.measure.half.iter().enumerate().rev() {
            let s = (0.5 * (i + 1) as f64 * z).sin();
            acc += 4.0 * w * s * s;
        }
        acc
    }

    /// `Σ_{r} q(r) (1 − cos(2π k r / n))` for every `k`, i.e. `1 − μ̂` on the
    /// frequencies of an `n`-site torus.
    pub fn torus_symbol(&self, n: usize) -> Result<Vec<f64>> {
        let q = self.measure.on_torus(n)?;
        if self.measure.truncation_radius() <= 64 {
            return Ok((0..n)
                .map(|k| self.one_minus_char_fn(2.0 * PI * k as f64 / n as f64))
                .collect());
        }
        use rustfft::{num_complex::Complex, FftPlanner};
        let mut buf: Vec<Complex<f64>> = q.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        Ok(buf.iter().map(|c| (1.0 - c.re).max(0.0)).collect())
    }
}

/// `μ̂(z) = Σ_j q(j) cos(jz)`.
pub fn char_fn(model: &WalkModel, z: f64) -> f64 {
    debug_assert!(z.abs() <= PI + 1e-12);
    1.0 - model.one_minus_char_fn(z)
}

/// `(Lf)(m) = Σ_n q(n − m) [f(n) − f(m)]` on a periodic box.
pub fn generator_apply(model: &WalkModel, field: &[f64]) -> Result<Vec<f64>> {
    let n = field.len();
    let radius = model.measure.truncation_radius();
    if n < 2 * radius {
        return Err(invalid(format!("box of {n} sites is smaller than 2 × {radius}")));
    }
    let atoms: Vec<(usize, f64)> = model.measure.positive_atoms().collect();
    let mut out = vec![0.0; n];
    for (m, slot) in out.iter_mut().enumerate() {
        let centre = field[m];
        let mut acc = 0.0;
        for &(j, w) in &atoms {
            let right = field[(m + j) % n];
            let left = field[(m + n - j % n) % n];
            acc += w * ((right - centre) + (left - centre));
        }
        *slot = acc;
    }
    Ok(out)
}

/// `μ̂(z)` within this of 1 away from the origin counts as reaching 1.
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// Evaluation grids for [`verify_assumption`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionGrid {
    /// Small positive frequencies used for the `(ν, a)` fit.
    pub fit: Vec<f64>,
    /// Frequencies covering `[-π, π]` for the uniqueness-of-maximum check.
    pub uniqueness: Vec<f64>,
    /// Frequencies with `|z|` at or below this radius count as "near zero".
    pub exclusion_radius: f64,
}

impl AssumptionGrid {
    /// 48 log-spaced fit points on `[0.01, 0.3]` and `uniqueness_points`
    /// uniform points on `[-π, π]`.
    pub fn standard(uniqueness_points: usize) -> Self {
        let fit = geomspace(0.01, 0.3, 48);
        let uniqueness = (0..uniqueness_points)
            .map(|i| -PI + 2.0 * PI * i as f64 / (uniqueness_points - 1) as f64)
            .collect();
        Self {
            fit,
            uniqueness,
            exclusion_radius: 0.3,
        }
    }
}

/// Result of the numerical check of the small-frequency expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub nu_hat: f64,
    pub a_hat: f64,
    /// `max μ̂(z) − 1` over the uniqueness grid outside the exclusion radius.
    pub max_unit_violation: f64,
    pub fit_min: f64,
    pub fit_max: f64,
    pub fit_points: usize,
    pub uniqueness_points: usize,
    pub truncated_mass: f64,
}

impl AssumptionReport {
    pub fn to_record(&self) -> crate::output::Record {
        let mut r = crate::output::Record::new();
        r.push("nu_hat", self.nu_hat);
        r.push("a_hat", self.a_hat);
        r.push("max_unit_violation", self.max_unit_violation);
        r.push("fit_min", self.fit_min);
        r.push("fit_max", self.fit_max);
        r.push("fit_points", self.fit_points);
        r.push("uniqueness_points", self.uniqueness_points);
        r.push("truncated_mass", self.truncated_mass);
        r
    }
}

/// Fits `(1 − μ̂(z)) / z^α = ν + C z^a` on the fit grid and checks that
/// `μ̂ < 1` away from the origin.
pub fn verify_assumption(model: &WalkModel, grid: &AssumptionGrid) -> Result<AssumptionReport> {
    if grid.fit.len() < 4 {
        return Err(invalid("fit grid needs at least 4 points"));
    }
    if grid.fit.iter().any(|&z| z <= 0.0 || z > 0.3 + 1e-12) {
        return Err(invalid("fit grid must lie in (0, 0.3]"));
    }
    let mut fit = grid.fit.clone();
    fit.sort_by(f64::total_cmp);
    let ys: Vec<f64> = fit
        .iter()
        .map(|&z| model.one_minus_char_fn(z) / z.powf(model.alpha))
        .collect();

    // profile out (ν, C) by linear least squares for each trial exponent
    let sse = |a: f64| -> (f64, f64, f64) {
        let xs: Vec<f64> = fit.iter().map(|z| z.powf(a)).collect();
        let (c, nu) = crate::quad::linear_fit(&xs, &ys);
        let e: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - nu - c * x).powi(2)).sum();
        (e, nu, c)
    };
    let scan: Vec<f64> = (1..=80).map(|i| 0.05 * i as f64).collect();
    let mut best = scan[0];
    let mut best_e = f64::INFINITY;
    for &a in &scan {
        let (e, _, _) = sse(a);
        if e < best_e {
            best_e = e;
            best = a;
        }
    }
    // golden-section refinement around the best scan point
    let (mut lo, mut hi) = ((best - 0.05).max(1e-3), best + 0.05);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (sse(x1).0, sse(x2).0);
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = sse(x1).0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = sse(x2).0;
        }
    }
    let a_hat = 0.5 * (lo + hi);
    let (_, nu_hat, _) = sse(a_hat);
    if !(nu_hat > 0.0 && nu_hat.is_finite() && a_hat.is_finite()) {
        return Err(Error::FitFailure(format!("nu_hat = {nu_hat}, a_hat = {a_hat}")));
    }

    // the remainder (1 − μ̂)/z^α − ν̂ must move in one direction across the window
    let resid: Vec<f64> = ys.iter().map(|y| y - nu_hat).collect();
    let tol = 1e-9 * nu_hat;
    let rising = resid.windows(2).all(|w| w[1] >= w[0] - tol);
    let falling = resid.windows(2).all(|w| w[1] <= w[0] + tol);
    if !(rising || falling) {
        return Err(Error::FitFailure("remainder is not monotone on the fit window".into()));
    }

    let mut max_violation = f64::NEG_INFINITY;
    for &z in &grid.uniqueness {
        if z.abs() <= grid.exclusion_radius {
            continue;
        }
        max_violation = max_violation.max(-model.one_minus_char_fn(z));
    }
    if max_violation >= -UNIT_TOLERANCE {
        return Err(Error::FitFailure(format!(
            "characteristic function reaches 1 away from the origin (excess {max_violation:e})"
        )));
    }

    Ok(AssumptionReport {
        nu_hat,
        a_hat,
        max_unit_violation: max_violation,
        fit_min: fit[0],
        fit_max: fit[fit.len() - 1],
        fit_points: fit.len(),
        uniqueness_points: grid.uniqueness.len(),
        truncated_mass: model.truncated_mass,
    })
}
