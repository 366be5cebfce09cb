//! Monte Carlo studies on top of the lattice simulator.
//!
//! Every study runs replicas in parallel and reduces them in replica order,
//! so a fixed seed gives bit-identical reports regardless of the worker
//! count. Standard errors come from a grouped jackknife over replicas.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::output::Record;
use crate::quad::{linear_fit, pairwise_sum};
use crate::simulator::{steps_for, CoupledPropagator, FieldState, Propagator, SheConfig, SigmaKind, SigmaSpec};

/// Worker-count override; never affects results.
pub const THREADS_ENV: &str = "SHELAB_THREADS";

/// Largest tolerated fraction of aborted replicas.
pub const MAX_ABORT_FRACTION: f64 = 0.01;

/// Smallest replica count accepted by the moment estimators.
pub const MIN_REPLICAS: u64 = 100;

/// Jackknife groups; fewer replicas fall back to delete-one.
pub const JACKKNIFE_GROUPS: usize = 200;

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

/// Completed replicas in replica order, with the aborted ones counted.
#[derive(Debug, Clone)]
pub struct ReplicaOutcomes<T> {
    pub ids: Vec<u64>,
    pub values: Vec<T>,
    pub aborted: usize,
}

/// Runs `f` on replicas `0..replicas`.
///
/// Aborted trajectories are dropped and counted; more than
/// [`MAX_ABORT_FRACTION`] of them fails the run. Any other error is returned
/// as is.
pub fn run_replicas<T, F>(replicas: u64, f: F) -> Result<ReplicaOutcomes<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = pool().install(|| (0..replicas).into_par_iter().map(&f).collect());
    let mut ids = Vec::with_capacity(results.len());
    let mut values = Vec::with_capacity(results.len());
    let mut aborted = 0;
    for (r, res) in (0..replicas).zip(results) {
        match res {
            Ok(v) => {
                ids.push(r);
                values.push(v);
            }
            Err(Error::Aborted { .. }) => aborted += 1,
            Err(e) => return Err(e),
        }
    }
    if aborted as f64 > MAX_ABORT_FRACTION * replicas as f64 {
        return Err(Error::TooManyAborts {
            aborted,
            replicas: replicas as usize,
        });
    }
    Ok(ReplicaOutcomes { ids, values, aborted })
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Column means of row-major `rows` (each of length `dim`), summed pairwise.
fn column_means(rows: &[f64], dim: usize) -> Vec<f64> {
    let count = rows.len() / dim;
    let mut col = vec![0.0; count];
    (0..dim)
        .map(|c| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = rows[i * dim + c];
            }
            pairwise_sum(&col) / count as f64
        })
        .collect()
}

/// Grouped jackknife for a smooth function of column means.
///
/// `rows` holds one row of `dim` statistics per replica in replica order.
/// Groups are contiguous runs of replicas, so the result does not depend on
/// how the replicas were scheduled.
pub fn jackknife<F>(rows: &[f64], dim: usize, f: F) -> Estimate
where
    F: Fn(&[f64]) -> f64,
{
    assert!(dim > 0 && rows.len().is_multiple_of(dim));
    let count = rows.len() / dim;
    assert!(count >= 2, "jackknife needs two replicas");
    let full = column_means(rows, dim);
    let value = f(&full);
    let groups = count.min(JACKKNIFE_GROUPS);
    let bounds: Vec<usize> = (0..=groups).map(|g| g * count / groups).collect();
    let group_sums: Vec<Vec<f64>> = bounds
        .windows(2)
        .map(|w| {
            let means = column_means(&rows[w[0] * dim..w[1] * dim], dim);
            means.iter().map(|m| m * (w[1] - w[0]) as f64).collect()
        })
        .collect();
    let totals: Vec<f64> = (0..dim)
        .map(|c| pairwise_sum(&group_sums.iter().map(|g| g[c]).collect::<Vec<_>>()))
        .collect();
    let leave_out: Vec<f64> = bounds
        .windows(2)
        .zip(&group_sums)
        .map(|(w, sums)| {
            let rest = (count - (w[1] - w[0])) as f64;
            let means: Vec<f64> = totals.iter().zip(sums).map(|(t, s)| (t - s) / rest).collect();
            f(&means)
        })
        .collect();
    let g = groups as f64;
    let mean = pairwise_sum(&leave_out) / g;
    let ss = pairwise_sum(&leave_out.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>());
    Estimate {
        value,
        std_error: ((g - 1.0) / g * ss).sqrt(),
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// The moment `E[∏_i U_T(x_i)^k]`.
///
/// With `translation_average` each replica contributes the mean of the
/// product over all shifts of the point set, which has the same expectation
/// because the torus and the flat initial profile are shift invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentSpec {
    pub points: Vec<usize>,
    pub k: u32,
    pub translation_average: bool,
}

impl MomentSpec {
    /// `E[U_T(x)^k]`.
    pub fn power(x: usize, k: u32) -> Self {
        Self {
            points: vec![x],
            k,
            translation_average: false,
        }
    }

    /// `E[∏ U_T(x_i)]`.
    pub fn product(points: Vec<usize>) -> Self {
        Self {
            points,
            k: 1,
            translation_average: false,
        }
    }

    pub fn averaged(self) -> Self {
        Self {
            translation_average: true,
            ..self
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.points.is_empty() || self.k == 0 {
            return Err(invalid("a moment needs at least one point and k ≥ 1"));
        }
        if let Some(&x) = self.points.iter().find(|&&x| x >= n) {
            return Err(invalid(format!("site {x} is outside the box of {n} sites")));
        }
        Ok(())
    }

    /// The per-replica statistic for one field.
    pub fn statistic(&self, field: &[f64]) -> f64 {
        let n = field.len();
        let at = |shift: usize| -> f64 {
            self.points
                .iter()
                .map(|&x| field[(x + shift) % n].powi(self.k as i32))
                .product()
        };
        if self.translation_average {
            let terms: Vec<f64> = (0..n).map(at).collect();
            pairwise_sum(&terms) / n as f64
        } else {
            at(0)
        }
    }

    fn label(&self) -> String {
        let pts: Vec<String> = self.points.iter().map(|p| p.to_string()).collect();
        pts.join(";")
    }
}

/// Monte Carlo estimate of one moment at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub spec: MomentSpec,
    pub horizon: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub replicas: usize,
    pub aborted: usize,
    /// `(replica, statistic)` in replica order.
    pub samples: Vec<(u64, f64)>,
}

pub const MOMENT_SAMPLE_HEADER: [&str; 2] = ["replica", "statistic"];

impl MomentReport {
    fn from_samples(spec: MomentSpec, horizon: f64, ids: &[u64], stats: Vec<f64>, aborted: usize) -> Self {
        let est = jackknife(&stats, 1, |m| m[0]);
        Self {
            spec,
            horizon,
            estimate: est.value,
            std_error: est.std_error,
            replicas: stats.len(),
            aborted,
            samples: ids.iter().copied().zip(stats).collect(),
        }
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push("points", self.spec.label());
        r.push("k", self.spec.k);
        r.push("m", self.spec.points.len());
        r.push("translation_average", self.spec.translation_average);
        r.push("T", self.horizon);
        r.push("estimate", self.estimate);
        r.push("std_error", self.std_error);
        r.push("replicas", self.replicas);
        r.push("aborted", self.aborted);
        r
    }

    pub fn sample_records(&self) -> Vec<Record> {
        self.samples
            .iter()
            .map(|&(id, v)| {
                let mut r = Record::new();
                r.push("replica", id);
                r.push("statistic", v);
                r
            })
            .collect()
    }
}

fn check_replicas(replicas: u64) -> Result<()> {
    if replicas < MIN_REPLICAS {
        return Err(invalid(format!(
            "need at least {MIN_REPLICAS} replicas, got {replicas}"
        )));
    }
    Ok(())
}

/// Several moments of the same runs at the horizon.
pub fn estimate_moments(config: &SheConfig, specs: &[MomentSpec], replicas: u64) -> Result<Vec<MomentReport>> {
    check_replicas(replicas)?;
    for s in specs {
        s.check(config.n)?;
    }
    let p = Propagator::new(&final_only(config))?;
    let out = run_replicas(replicas, |r| {
        let u = p.run(r)?.final_state.values;
        Ok(specs.iter().map(|s| s.statistic(&u)).collect::<Vec<f64>>())
    })?;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let stats = out.values.iter().map(|v| v[i]).collect();
            MomentReport::from_samples(s.clone(), config.horizon, &out.ids, stats, out.aborted)
        })
        .collect())
}

/// Plain Monte Carlo estimate of one moment with a jackknife standard error.
pub fn estimate_moment(config: &SheConfig, spec: &MomentSpec, replicas: u64) -> Result<MomentReport> {
    Ok(estimate_moments(config, std::slice::from_ref(spec), replicas)?.remove(0))
}

fn final_only(config: &SheConfig) -> SheConfig {
    SheConfig {
        snapshot_times: Vec::new(),
        ..config.clone()
    }
}

/// Paired estimates under `σ` and `σ̄` driven by the same noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub lower: MomentReport,
    pub upper: MomentReport,
    pub sigma: SigmaSpec,
    pub sigma_bar: SigmaSpec,
    /// `estimate(σ̄) − estimate(σ)`.
    pub difference: f64,
    pub paired_std_error: f64,
    /// `estimate(σ) ≤ estimate(σ̄) + 2·paired_std_error`.
    pub ordering_holds: bool,
    /// `difference > 2·paired_std_error`.
    pub strict: bool,
    /// Every replica statistic agrees bit for bit.
    pub bitwise_equal: bool,
    pub realized_min: f64,
    pub realized_max: f64,
}

pub const COMPARISON_SAMPLE_HEADER: [&str; 4] = ["replica", "lower", "upper", "difference"];

impl ComparisonReport {
    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.extend_prefixed("sigma", &self.sigma.to_record());
        r.extend_prefixed("sigma_bar", &self.sigma_bar.to_record());
        r.extend_prefixed("lower", &self.lower.to_record());
        r.extend_prefixed("upper", &self.upper.to_record());
        r.push("difference", self.difference);
        r.push("paired_std_error", self.paired_std_error);
        r.push("ordering_holds", self.ordering_holds);
        r.push("strict", self.strict);
        r.push("bitwise_equal", self.bitwise_equal);
        r.push("realized_min", self.realized_min);
        r.push("realized_max", self.realized_max);
        r
    }

    pub fn sample_records(&self) -> Vec<Record> {
        self.lower
            .samples
            .iter()
            .zip(&self.upper.samples)
            .map(|(&(id, a), &(_, b))| {
                let mut r = Record::new();
                r.push("replica", id);
                r.push("lower", a);
                r.push("upper", b);
                r.push("difference", b - a);
                r
            })
            .collect()
    }
}

/// Checks `0 ≤ σ(z) ≤ σ̄(z)` on `[lo, hi]`: at the ends, at every kink of
/// either coefficient inside the range, and on a uniform grid.
fn check_ordering(sigma: &SigmaSpec, sigma_bar: &SigmaSpec, lo: f64, hi: f64) -> Result<()> {
    let kinks = |s: &SigmaSpec| -> Vec<f64> {
        match s.kind {
            SigmaKind::Linear | SigmaKind::AbsLinear => vec![0.0],
            SigmaKind::ClippedLinear => {
                let z = s.clip.unwrap_or(0.0) / s.lambda.max(f64::MIN_POSITIVE);
                vec![0.0, z, -z]
            }
            SigmaKind::AffineBounded => vec![-1.0, 1.0],
        }
    };
    let mut zs: Vec<f64> = (0..=1024).map(|i| lo + (hi - lo) * i as f64 / 1024.0).collect();
    zs.extend(
        kinks(sigma)
            .into_iter()
            .chain(kinks(sigma_bar))
            .filter(|z| (lo..=hi).contains(z)),
    );
    for z in zs {
        let (a, b) = (sigma.eval(z), sigma_bar.eval(z));
        if !(a >= 0.0 && a <= b) {
            return Err(Error::Precondition(format!(
                "need 0 ≤ σ(z) ≤ σ̄(z) on the realized range [{lo:e}, {hi:e}]; at z = {z:e}: σ = {a:e}, σ̄ = {b:e}"
            )));
        }
    }
    Ok(())
}

/// Compares a moment under `σ` and `σ̄` with common random numbers.
///
/// Both coefficients must fix zero. The pointwise ordering is checked on the
/// range of field values the runs actually visited.
pub fn compare_moments(
    config: &SheConfig,
    sigma: SigmaSpec,
    sigma_bar: SigmaSpec,
    spec: &MomentSpec,
    replicas: u64,
) -> Result<ComparisonReport> {
    Ok(compare_moment_set(config, sigma, sigma_bar, std::slice::from_ref(spec), replicas)?.remove(0))
}

/// As [`compare_moments`] for several moments of the same paired runs.
pub fn compare_moment_set(
    config: &SheConfig,
    sigma: SigmaSpec,
    sigma_bar: SigmaSpec,
    specs: &[MomentSpec],
    replicas: u64,
) -> Result<Vec<ComparisonReport>> {
    check_replicas(replicas)?;
    for spec in specs {
        spec.check(config.n)?;
    }
    if !sigma.fixes_zero() || !sigma_bar.fixes_zero() {
        return Err(Error::Precondition("both coefficients must satisfy σ(0) = 0".into()));
    }
    let base = final_only(config);
    let p = Propagator::new(&SheConfig { sigma, ..base.clone() })?;
    let p_bar = Propagator::new(&SheConfig {
        sigma: sigma_bar,
        ..base
    })?;
    let out = run_replicas(replicas, |r| {
        let a = p.run(r)?;
        let b = p_bar.run(r)?;
        let stats: Vec<(f64, f64)> = specs
            .iter()
            .map(|s| (s.statistic(&a.final_state.values), s.statistic(&b.final_state.values)))
            .collect();
        Ok((stats, a.field_min.min(b.field_min), a.field_max.max(b.field_max)))
    })?;
    let lo = out.values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let hi = out.values.iter().map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
    check_ordering(&sigma, &sigma_bar, lo, hi)?;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let a: Vec<f64> = out.values.iter().map(|v| v.0[i].0).collect();
            let b: Vec<f64> = out.values.iter().map(|v| v.0[i].1).collect();
            let bitwise_equal = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y - x).collect();
            let paired = jackknife(&diffs, 1, |m| m[0]);
            let lower = MomentReport::from_samples(spec.clone(), config.horizon, &out.ids, a, out.aborted);
            let upper = MomentReport::from_samples(spec.clone(), config.horizon, &out.ids, b, out.aborted);
            let difference = upper.estimate - lower.estimate;
            ComparisonReport {
                ordering_holds: lower.estimate <= upper.estimate + 2.0 * paired.std_error,
                strict: difference > 2.0 * paired.std_error,
                difference,
                paired_std_error: paired.std_error,
                bitwise_equal,
                realized_min: lo,
                realized_max: hi,
                lower,
                upper,
                sigma,
                sigma_bar,
            }
        })
        .collect())
}

/// Default step of the Volterra oracle.
pub const ORACLE_STEP: f64 = 1e-3;

/// Largest relative change allowed when the oracle grid is halved.
pub const ORACLE_REFINEMENT_TOLERANCE: f64 = 1e-4;

/// Solution of `m(t) = 1 + λ² ∫_0^t (8πν(t − s))^{-1/2} m(s) ds`, the second
/// moment of the continuum parabolic Anderson model started from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraSolution {
    pub nu: f64,
    pub lambda: f64,
    pub step: f64,
    /// `m(i·step)`.
    pub values: Vec<f64>,
    /// Largest relative change against the solution on twice the step.
    pub refinement_change: f64,
}

impl VolterraSolution {
    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }

    /// Linear interpolation; NaN outside `[0, horizon]`.
    pub fn eval(&self, t: f64) -> f64 {
        let pos = t / self.step;
        let last = (self.values.len() - 1) as f64;
        if !(0.0..=last * (1.0 + 1e-12)).contains(&pos) {
            return f64::NAN;
        }
        let pos = pos.min(last);
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Least-squares slope of `log m` at `points` equally spaced times in `[t0, t1]`.
    pub fn log_slope(&self, t0: f64, t1: f64, points: usize) -> f64 {
        let ts = window_times(t0, t1, points);
        let logs: Vec<f64> = ts.iter().map(|&t| self.eval(t).ln()).collect();
        linear_fit(&ts, &logs).0
    }
}

fn window_times(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| t0 + (t1 - t0) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Product trapezoid solve on `steps` panels of width `h`.
///
/// On each panel `m` is linear, and the kernel `r^{-1/2}` is integrated
/// against both hat functions exactly. `w_hi[d]` and `w_lo[d]` are the
/// weights of the panel whose far end lies `d` steps back.
fn volterra_solve(nu: f64, lambda: f64, h: f64, steps: usize) -> Vec<f64> {
    let c = lambda * lambda / (8.0 * std::f64::consts::PI * nu).sqrt();
    let sh = h.sqrt();
    let mut w_hi = vec![0.0; steps + 1];
    let mut w_lo = vec![0.0; steps + 1];
    for d in 1..=steps {
        let (a, b) = ((d - 1) as f64, d as f64);
        let root_gap = 1.0 / (b.sqrt() + a.sqrt());
        let pow_gap = (b * b.sqrt() - a * a.sqrt()) * 2.0 / 3.0;
        w_hi[d] = c * sh * (2.0 * b * root_gap - pow_gap);
        w_lo[d] = c * sh * (pow_gap - 2.0 * a * root_gap);
    }
    let mut m = Vec::with_capacity(steps + 1);
    m.push(1.0);
    for n in 1..=steps {
        // m_i for i < n carries w_lo[n − i] from its own panel and
        // w_hi[n − i + 1] from the panel before it.
        let mut acc = w_lo[n] * m[0];
        for (i, &mi) in m.iter().enumerate().skip(1) {
            acc += (w_lo[n - i] + w_hi[n - i + 1]) * mi;
        }
        m.push((1.0 + acc) / (1.0 - w_hi[1]));
    }
    m
}

/// Second-moment oracle on `[0, horizon]` with grid step `step`.
///
/// Solves twice, on `2·step` and `step`, and fails with
/// [`Error::GridTooCoarse`] if the two disagree at a common node by more
/// than [`ORACLE_REFINEMENT_TOLERANCE`] relative. The finer solution is
/// returned.
pub fn pam_second_moment_oracle(nu: f64, lambda: f64, horizon: f64, step: f64) -> Result<VolterraSolution> {
    if !(nu > 0.0 && nu.is_finite()) || !lambda.is_finite() {
        return Err(invalid("oracle needs ν > 0 and a finite λ"));
    }
    if !(step > 0.0 && horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("oracle needs a positive step and horizon"));
    }
    let coarse_steps = (horizon / (2.0 * step)).ceil() as usize;
    let step = horizon / (2 * coarse_steps) as f64;
    let coarse = volterra_solve(nu, lambda, 2.0 * step, coarse_steps);
    let fine = volterra_solve(nu, lambda, step, 2 * coarse_steps);
    let change = coarse
        .iter()
        .zip(fine.iter().step_by(2))
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max);
    if !(change <= ORACLE_REFINEMENT_TOLERANCE) {
        return Err(Error::GridTooCoarse(change));
    }
    Ok(VolterraSolution {
        nu,
        lambda,
        step,
        values: fine,
        refinement_change: change,
    })
}

/// Per-pair statistics of a coupled resolution ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStatistics {
    pub eps_coarse: f64,
    pub eps_fine: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    /// Mean and variance of `U_T(0)` on each grid.
    pub coarse_mean: f64,
    pub coarse_var: f64,
    pub fine_mean: f64,
    pub fine_var: f64,
}

/// Rate at which successive lattice resolutions approach each other.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub ladder: Vec<f64>,
    pub statistics: Vec<PairStatistics>,
    /// `−d log₂(median) / d level`; `None` when every difference is zero.
    pub fitted_slope: Option<f64>,
    pub rho_target: f64,
    pub holder_eta: f64,
    pub time_ratio: u64,
    pub compare_times: usize,
    pub replicas: usize,
    pub aborted: usize,
    pub passed: bool,
    /// `(pair, replica, sup difference, fine U_T(0), coarse U_T(0))`.
    pub samples: Vec<(usize, u64, f64, f64, f64)>,
}

pub const RATE_SAMPLE_HEADER: [&str; 7] = [
    "pair",
    "replica",
    "eps_coarse",
    "eps_fine",
    "sup_difference",
    "fine_u0",
    "coarse_u0",
];

impl RateReport {
    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        let ladder: Vec<String> = self.ladder.iter().map(|e| crate::output::format_float(*e)).collect();
        r.push("ladder", ladder.join(";"));
        r.push("rho_target", self.rho_target);
        r.push("target_slope", self.rho_target / 2.0);
        r.push("holder_eta", self.holder_eta);
        r.push("fitted_slope", self.fitted_slope.unwrap_or(f64::NAN));
        r.push("vacuous", self.fitted_slope.is_none());
        r.push("time_ratio", self.time_ratio);
        r.push("sup_over", format!("{} comparison times", self.compare_times));
        r.push("replicas", self.replicas);
        r.push("aborted", self.aborted);
        for (i, s) in self.statistics.iter().enumerate() {
            let p = format!("pair{i}");
            r.push(format!("{p}.eps_coarse"), s.eps_coarse);
            r.push(format!("{p}.eps_fine"), s.eps_fine);
            r.push(format!("{p}.median"), s.median);
            r.push(format!("{p}.q25"), s.q25);
            r.push(format!("{p}.q75"), s.q75);
            r.push(format!("{p}.mean"), s.mean);
            r.push(format!("{p}.coarse_mean_u0"), s.coarse_mean);
            r.push(format!("{p}.coarse_var_u0"), s.coarse_var);
            r.push(format!("{p}.fine_mean_u0"), s.fine_mean);
            r.push(format!("{p}.fine_var_u0"), s.fine_var);
        }
        r.push("passed", self.passed);
        r
    }

    pub fn sample_records(&self) -> Vec<Record> {
        self.samples
            .iter()
            .map(|&(pair, id, d, f, c)| {
                let s = &self.statistics[pair];
                let mut r = Record::new();
                r.push("pair", pair);
                r.push("replica", id);
                r.push("eps_coarse", s.eps_coarse);
                r.push("eps_fine", s.eps_fine);
                r.push("sup_difference", d);
                r.push("fine_u0", f);
                r.push("coarse_u0", c);
                r
            })
            .collect()
    }
}

/// Smallest power of two at least `2^ρ`: the time-step ratio between
/// adjacent levels, which keeps every level as stable as the coarsest.
pub fn ladder_time_ratio(rho_exponent: f64) -> u64 {
    ((2f64.powf(rho_exponent) * (1.0 - 1e-12)).ceil().max(1.0) as u64).next_power_of_two()
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let ss = pairwise_sum(&values.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>());
    (mean, ss / (n - 1.0).max(1.0))
}

/// Couples each adjacent pair of `ladder` on shared noise and fits the decay
/// of the median sup-difference.
///
/// `base` fixes everything but the resolution and must sit at `ladder[0]`;
/// its box extent is kept and `dt` shrinks by [`ladder_time_ratio`] per level.
pub fn convergence_rate(base: &SheConfig, ladder: &[f64], rho: f64, replicas: u64) -> Result<RateReport> {
    if ladder.len() < 3 {
        return Err(invalid("the ladder needs at least three levels"));
    }
    if ladder.windows(2).any(|w| ((w[0] / w[1]) - 2.0).abs() > 1e-12) {
        return Err(invalid("ladder levels must halve ε each step"));
    }
    if (ladder[0] - base.eps).abs() > 1e-12 * base.eps {
        return Err(invalid("the base configuration must sit at the coarsest level"));
    }
    let alpha = base.walk.alpha;
    if !(rho > 0.0 && rho < alpha - 1.0) {
        return Err(invalid(format!("need 0 < ρ < α − 1 = {}", alpha - 1.0)));
    }
    if replicas < 2 {
        return Err(invalid("need at least two replicas"));
    }
    let ratio = ladder_time_ratio(base.rho_exponent);
    let level = |i: usize| -> SheConfig {
        let scale = 1usize << i;
        SheConfig {
            eps: ladder[i],
            n: base.n * scale,
            dt: base.dt / (ratio.pow(i as u32)) as f64,
            snapshot_times: Vec::new(),
            ..base.clone()
        }
    };
    let mut statistics = Vec::new();
    let mut samples = Vec::new();
    let mut aborted = 0;
    let mut used = usize::MAX;
    let mut compare_times = 0;
    for pair in 0..ladder.len() - 1 {
        let coarse = level(pair);
        let fine = level(pair + 1);
        let cp = CoupledPropagator::new(&fine, &coarse)?;
        compare_times = compare_times.max(cp.compare_count());
        let out = run_replicas(replicas, |r| {
            let o = cp.run(r)?;
            Ok((o.sup_difference, o.fine.values[0], o.coarse.values[0]))
        })?;
        aborted += out.aborted;
        used = used.min(out.values.len());
        let sups: Vec<f64> = out.values.iter().map(|v| v.0).collect();
        let s = sorted(&sups);
        let (fine_mean, fine_var) = mean_var(&out.values.iter().map(|v| v.1).collect::<Vec<_>>());
        let (coarse_mean, coarse_var) = mean_var(&out.values.iter().map(|v| v.2).collect::<Vec<_>>());
        statistics.push(PairStatistics {
            eps_coarse: coarse.eps,
            eps_fine: fine.eps,
            median: quantile(&s, 0.5),
            q25: quantile(&s, 0.25),
            q75: quantile(&s, 0.75),
            mean: pairwise_sum(&sups) / sups.len() as f64,
            coarse_mean,
            coarse_var,
            fine_mean,
            fine_var,
        });
        samples.extend(
            out.ids
                .iter()
                .zip(&out.values)
                .map(|(&id, v)| (pair, id, v.0, v.1, v.2)),
        );
    }
    let fitted_slope = if statistics.iter().all(|s| s.median > 0.0) {
        let xs: Vec<f64> = (0..statistics.len()).map(|i| i as f64).collect();
        let ys: Vec<f64> = statistics.iter().map(|s| s.median.log2()).collect();
        Some(-linear_fit(&xs, &ys).0)
    } else {
        None
    };
    let passed = fitted_slope.map_or(statistics.iter().all(|s| s.median == 0.0), |s| s >= rho / 2.0);
    Ok(RateReport {
        ladder: ladder.to_vec(),
        statistics,
        fitted_slope,
        rho_target: rho,
        holder_eta: (alpha - 1.0) / (2.0 * alpha),
        time_ratio: ratio,
        compare_times,
        replicas: used,
        aborted,
        passed,
        samples,
    })
}

/// Mean squared time increments `E|U_{s+g}(x) − U_s(x)|²` at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementReport {
    pub eps: f64,
    pub dt: f64,
    pub start: f64,
    pub gaps: Vec<f64>,
    /// Site-averaged squared increment per gap.
    pub increments: Vec<Estimate>,
    /// Slope of `log E|ΔU|²` against `log g`.
    pub exponent: Estimate,
    pub replicas: usize,
    pub aborted: usize,
    /// Row-major `replicas × gaps` per-replica increments.
    pub samples: Vec<f64>,
    pub ids: Vec<u64>,
}

/// Fitted `(t − s)` exponent of the squared increment.
pub fn temporal_increment_scaling(
    config: &SheConfig,
    start: f64,
    gaps: &[f64],
    replicas: u64,
) -> Result<IncrementReport> {
    if gaps.len() < 2 {
        return Err(invalid("need at least two gaps"));
    }
    if gaps.iter().any(|&g| !(g >= config.dt * (1.0 - 1e-9))) {
        return Err(invalid(format!("every gap must be at least dt = {}", config.dt)));
    }
    if replicas < 2 {
        return Err(invalid("need at least two replicas"));
    }
    let start_step = steps_for(start, config.dt)?;
    let gap_steps = gaps
        .iter()
        .map(|&g| steps_for(g, config.dt))
        .collect::<Result<Vec<_>>>()?;
    let last = start_step + gap_steps.iter().copied().max().unwrap_or(0);
    let mut times: Vec<f64> = std::iter::once(start_step)
        .chain(gap_steps.iter().map(|g| start_step + g))
        .map(|s| s as f64 * config.dt)
        .collect();
    times.dedup();
    let cfg = SheConfig {
        horizon: last as f64 * config.dt,
        snapshot_times: times,
        ..config.clone()
    };
    let p = Propagator::new(&cfg)?;
    let out = run_replicas(replicas, |r| {
        let snaps = p.run(r)?.snapshots;
        let at = |step: u64| -> &FieldState {
            let t = step as f64 * cfg.dt;
            snaps
                .iter()
                .find(|s| (s.t - t).abs() <= 1e-9 * cfg.dt)
                .expect("snapshot scheduled")
        };
        let base = &at(start_step).values;
        Ok(gap_steps
            .iter()
            .map(|&g| {
                let later = &at(start_step + g).values;
                let sq: Vec<f64> = later.iter().zip(base).map(|(a, b)| (a - b) * (a - b)).collect();
                pairwise_sum(&sq) / sq.len() as f64
            })
            .collect::<Vec<f64>>())
    })?;
    let dim = gaps.len();
    let rows: Vec<f64> = out.values.concat();
    let increments = (0..dim).map(|i| jackknife(&rows, dim, |m| m[i])).collect();
    let log_gaps: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let exponent = jackknife(&rows, dim, |m| {
        let logs: Vec<f64> = m.iter().map(|v| v.ln()).collect();
        linear_fit(&log_gaps, &logs).0
    });
    Ok(IncrementReport {
        eps: config.eps,
        dt: config.dt,
        start,
        gaps: gaps.to_vec(),
        increments,
        exponent,
        replicas: out.values.len(),
        aborted: out.aborted,
        samples: rows,
        ids: out.ids,
    })
}

pub const INCREMENT_SAMPLE_HEADER: [&str; 4] = ["eps", "replica", "gap", "increment"];

impl IncrementReport {
    pub fn sample_records(&self) -> Vec<Record> {
        let dim = self.gaps.len();
        let mut out = Vec::with_capacity(self.samples.len());
        for (row, &id) in self.samples.chunks(dim).zip(&self.ids) {
            for (&g, &v) in self.gaps.iter().zip(row) {
                let mut r = Record::new();
                r.push("eps", self.eps);
                r.push("replica", id);
                r.push("gap", g);
                r.push("increment", v);
                out.push(r);
            }
        }
        out
    }
}

/// Accepted band for the fitted increment exponent.
pub const HOLDER_EXPONENT_BAND: (f64, f64) = (0.8, 1.2);

/// Accepted factor between the measured and predicted level ratio.
pub const HOLDER_LEVEL_FACTOR: f64 = 2.0;

/// Increment scaling at two resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderReport {
    pub coarse: IncrementReport,
    pub fine: IncrementReport,
    /// Geometric mean over gaps of `E|ΔU|²(fine) / E|ΔU|²(coarse)`.
    pub level_ratio: f64,
    /// `ε_coarse / ε_fine`, the `1/ε` scaling.
    pub predicted_ratio: f64,
    pub exponents_pass: bool,
    pub level_pass: bool,
}

impl HolderReport {
    pub fn passed(&self) -> bool {
        self.exponents_pass && self.level_pass
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        for (name, rep) in [("coarse", &self.coarse), ("fine", &self.fine)] {
            r.push(format!("{name}.eps"), rep.eps);
            r.push(format!("{name}.exponent"), rep.exponent.value);
            r.push(format!("{name}.exponent_se"), rep.exponent.std_error);
            for (g, inc) in rep.gaps.iter().zip(&rep.increments) {
                r.push(
                    format!("{name}.increment@{}", crate::output::format_float(*g)),
                    inc.value,
                );
            }
            r.push(format!("{name}.replicas"), rep.replicas);
            r.push(format!("{name}.aborted"), rep.aborted);
        }
        r.push("start", self.coarse.start);
        r.push("dt", self.coarse.dt);
        r.push("level_ratio", self.level_ratio);
        r.push("predicted_ratio", self.predicted_ratio);
        r.push("exponents_pass", self.exponents_pass);
        r.push("level_pass", self.level_pass);
        r
    }
}

/// Runs [`temporal_increment_scaling`] at `config.eps` and at `fine_eps` on a
/// box of the same extent, then checks the exponent band and the `1/ε` level.
pub fn holder_study(
    config: &SheConfig,
    fine_eps: f64,
    start: f64,
    gaps: &[f64],
    replicas: u64,
) -> Result<HolderReport> {
    let scale = config.eps / fine_eps;
    let fine_n = (config.n as f64 * scale).round() as usize;
    if !(scale > 1.0) || ((fine_n as f64 - config.n as f64 * scale).abs() > 1e-9) {
        return Err(invalid("the fine resolution must divide the box evenly"));
    }
    let coarse = temporal_increment_scaling(config, start, gaps, replicas)?;
    let fine_cfg = SheConfig {
        eps: fine_eps,
        n: fine_n,
        ..config.clone()
    };
    let fine = temporal_increment_scaling(&fine_cfg, start, gaps, replicas)?;
    let logs: Vec<f64> = fine
        .increments
        .iter()
        .zip(&coarse.increments)
        .map(|(f, c)| (f.value / c.value).ln())
        .collect();
    let level_ratio = (pairwise_sum(&logs) / logs.len() as f64).exp();
    let (lo, hi) = HOLDER_EXPONENT_BAND;
    let exponents_pass = [&coarse, &fine].iter().all(|r| (lo..=hi).contains(&r.exponent.value));
    let rel = level_ratio / scale;
    Ok(HolderReport {
        level_pass: (1.0 / HOLDER_LEVEL_FACTOR..=HOLDER_LEVEL_FACTOR).contains(&rel),
        exponents_pass,
        level_ratio,
        predicted_ratio: scale,
        coarse,
        fine,
    })
}

/// Relative tolerance on Lyapunov slopes.
pub const LYAPUNOV_TOLERANCE: f64 = 0.15;

/// Times used to fit a slope over a window.
pub const LYAPUNOV_POINTS: usize = 11;

/// Fitted growth rate of `log E[U_t^k]` with the theoretical bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub k: u32,
    pub window: (f64, f64),
    pub times: Vec<f64>,
    /// Site-averaged `Ê[U_t^k]` at `times`.
    pub moments: Vec<Estimate>,
    pub mc_slope: Estimate,
    pub oracle_slope: Option<f64>,
    /// `L_σ⁴ k(k² − 1) / (48ν)`.
    pub lower_bound: f64,
    /// `Lip_σ⁴ k³ / ν`.
    pub upper_bound: f64,
    pub passed: bool,
    pub replicas: usize,
    pub aborted: usize,
    /// Row-major `replicas × times`.
    pub samples: Vec<f64>,
    pub ids: Vec<u64>,
}

pub const LYAPUNOV_SAMPLE_HEADER: [&str; 3] = ["replica", "t", "moment"];

impl LyapunovReport {
    /// `|mc − oracle| / oracle`, when the oracle exists.
    pub fn oracle_gap(&self) -> Option<f64> {
        self.oracle_slope.map(|o| ((self.mc_slope.value - o) / o).abs())
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push("k", self.k);
        r.push("window_start", self.window.0);
        r.push("window_end", self.window.1);
        r.push("mc_slope", self.mc_slope.value);
        r.push("mc_slope_se", self.mc_slope.std_error);
        r.push("oracle_slope", self.oracle_slope.unwrap_or(f64::NAN));
        r.push("oracle_gap", self.oracle_gap().unwrap_or(f64::NAN));
        r.push("lower_bound", self.lower_bound);
        r.push("upper_bound", self.upper_bound);
        for (t, m) in self.times.iter().zip(&self.moments) {
            r.push(format!("moment@{}", crate::output::format_float(*t)), m.value);
        }
        r.push("replicas", self.replicas);
        r.push("aborted", self.aborted);
        r.push("passed", self.passed);
        r
    }

    pub fn sample_records(&self) -> Vec<Record> {
        let dim = self.times.len();
        let mut out = Vec::with_capacity(self.samples.len());
        for (row, &id) in self.samples.chunks(dim).zip(&self.ids) {
            for (&t, &v) in self.times.iter().zip(row) {
                let mut r = Record::new();
                r.push("replica", id);
                r.push("t", t);
                r.push("moment", v);
                out.push(r);
            }
        }
        out
    }
}

/// Theoretical Lyapunov bounds `(lower, upper)` for order `k`.
pub fn lyapunov_bounds(sigma: &SigmaSpec, nu: f64, k: u32) -> (f64, f64) {
    let k = f64::from(k);
    let l4 = sigma.l_lower().powi(4);
    let lip4 = sigma.lip().powi(4);
    (l4 * k * (k * k - 1.0) / (48.0 * nu), lip4 * k * k * k / nu)
}

/// Fits the growth of the site-averaged `k`-th moment over `window`.
///
/// The slope's 95% interval must be narrower than half the slope, otherwise
/// the window is reported as too short. The verdict asserts only the lower
/// bound.
pub fn lyapunov_estimate(config: &SheConfig, k: u32, window: (f64, f64), replicas: u64) -> Result<LyapunovReport> {
    if config.walk.alpha != 2.0 {
        return Err(invalid("Lyapunov estimates need a finite-variance walk (α = 2)"));
    }
    if k < 2 {
        return Err(invalid("k must be at least 2"));
    }
    let (t0, t1) = window;
    if !(t0 >= 0.0 && t1 > t0 && t1 <= config.horizon * (1.0 + 1e-12)) {
        return Err(invalid(format!("window [{t0}, {t1}] must lie inside [0, T]")));
    }
    if replicas < 2 {
        return Err(invalid("need at least two replicas"));
    }
    let times = window_times(t0, t1, LYAPUNOV_POINTS);
    let cfg = SheConfig {
        horizon: t1,
        snapshot_times: times.clone(),
        ..config.clone()
    };
    let p = Propagator::new(&cfg)?;
    let spec = MomentSpec::power(0, k).averaged();
    let out = run_replicas(replicas, |r| {
        let snaps = p.run(r)?.snapshots;
        Ok(snaps.iter().map(|s| spec.statistic(&s.values)).collect::<Vec<f64>>())
    })?;
    let dim = times.len();
    let rows: Vec<f64> = out.values.concat();
    let moments: Vec<Estimate> = (0..dim).map(|i| jackknife(&rows, dim, |m| m[i])).collect();
    let mc_slope = jackknife(&rows, dim, |m| {
        let logs: Vec<f64> = m.iter().map(|v| v.ln()).collect();
        linear_fit(&times, &logs).0
    });
    let half_width = 1.96 * mc_slope.std_error;
    if !(half_width <= 0.5 * mc_slope.value.abs()) {
        return Err(Error::WindowTooShort(format!(
            "slope {:.4} ± {:.4} over [{t0}, {t1}]",
            mc_slope.value, half_width
        )));
    }
    let nu = config.walk.nu;
    let oracle_slope = if k == 2 && config.sigma.kind == SigmaKind::Linear {
        let m = pam_second_moment_oracle(nu, config.sigma.lambda, t1, ORACLE_STEP)?;
        Some(m.log_slope(t0, t1, LYAPUNOV_POINTS))
    } else {
        None
    };
    let (lower_bound, upper_bound) = lyapunov_bounds(&config.sigma, nu, k);
    Ok(LyapunovReport {
        k,
        window,
        passed: lower_bound * (1.0 - LYAPUNOV_TOLERANCE) <= mc_slope.value,
        times,
        moments,
        mc_slope,
        oracle_slope,
        lower_bound,
        upper_bound,
        replicas: out.values.len(),
        aborted: out.aborted,
        samples: rows,
        ids: out.ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::make_simple_walk;

    fn small(sigma: SigmaSpec) -> SheConfig {
        let mut c = SheConfig::new(make_simple_walk(), 0.25, sigma);
        c.n = 32;
        c.horizon = 0.25;
        c
    }

    #[test]
    fn jackknife_of_mean_is_classical() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let est = jackknife(&xs, 1, |m| m[0]);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((est.value - mean).abs() < 1e-12);
        assert!((est.std_error - (var / n).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn grouped_jackknife_close_to_delete_one() {
        let mut state = 0x9E37_79B9_7F4A_7C15u64;
        let xs: Vec<f64> = (0..4000)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let est = jackknife(&xs, 1, |m| m[0]);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let classical = (var / n).sqrt();
        assert!((est.std_error / classical - 1.0).abs() < 0.15);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
    }

    #[test]
    fn translation_average_of_flat_field() {
        let spec = MomentSpec::product(vec![0, 3]).averaged();
        assert_eq!(spec.statistic(&[2.0; 8]), 4.0);
        let spec = MomentSpec::power(1, 3);
        assert_eq!(spec.statistic(&[1.0, 2.0, 1.0]), 8.0);
    }

    #[test]
    fn zero_sigma_moment_is_one() {
        let c = small(SigmaSpec::zero());
        for k in [1, 2, 5] {
            let r = estimate_moment(&c, &MomentSpec::power(3, k), 100).unwrap();
            assert_eq!(r.estimate, 1.0);
            assert_eq!(r.std_error, 0.0);
        }
    }

    #[test]
    fn mean_one_within_errors() {
        let c = small(SigmaSpec::linear(1.0));
        let r = estimate_moment(&c, &MomentSpec::power(0, 1), 400).unwrap();
        assert!((r.estimate - 1.0).abs() < 3.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn too_few_replicas_rejected() {
        let c = small(SigmaSpec::zero());
        assert!(estimate_moment(&c, &MomentSpec::power(0, 2), 10).is_err());
        assert!(estimate_moment(&c, &MomentSpec::power(99, 2), 100).is_err());
    }

    #[test]
    fn equal_coefficients_compare_bitwise() {
        let c = small(SigmaSpec::zero());
        let s = SigmaSpec::abs_linear(0.7).unwrap();
        let r = compare_moments(&c, s, s, &MomentSpec::power(0, 2), 100).unwrap();
        assert!(r.bitwise_equal);
        assert_eq!(r.lower.estimate.to_bits(), r.upper.estimate.to_bits());
        assert_eq!(r.difference, 0.0);
        assert!(r.ordering_holds && !r.strict);
    }

    #[test]
    fn comparison_orders_by_slope() {
        let c = small(SigmaSpec::zero());
        let r = compare_moments(
            &c,
            SigmaSpec::abs_linear(0.25).unwrap(),
            SigmaSpec::abs_linear(1.0).unwrap(),
            &MomentSpec::power(0, 2).averaged(),
            200,
        )
        .unwrap();
        assert!(r.ordering_holds && r.strict, "{r:?}");
    }

    #[test]
    fn comparison_rejects_reversed_pair() {
        let c = small(SigmaSpec::zero());
        let err = compare_moments(
            &c,
            SigmaSpec::abs_linear(1.0).unwrap(),
            SigmaSpec::abs_linear(0.5).unwrap(),
            &MomentSpec::power(0, 2),
            100,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        let bounded = SigmaSpec::new(SigmaKind::AffineBounded, 1.0, None).unwrap();
        let err = compare_moments(&c, bounded, bounded, &MomentSpec::power(0, 2), 100).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn oracle_trivial_and_increasing() {
        let m = pam_second_moment_oracle(0.5, 0.0, 2.0, 0.01).unwrap();
        assert!(m.values.iter().all(|&v| v == 1.0));
        let m = pam_second_moment_oracle(0.5, 1.0, 2.0, 1e-3).unwrap();
        assert!(m.values.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn oracle_small_time_expansion() {
        // m(t) = 1 + 2cλ²√t + πc²λ⁴t + O(t^{3/2}), c = (8πν)^{-1/2}
        let (nu, lambda) = (0.5, 1.0);
        let m = pam_second_moment_oracle(nu, lambda, 0.01, 1e-5).unwrap();
        let c = 1.0 / (8.0 * std::f64::consts::PI * nu).sqrt();
        let t: f64 = 0.01;
        let approx = 1.0 + 2.0 * c * t.sqrt() + std::f64::consts::PI * c * c * t;
        assert!((m.eval(t) - approx).abs() < 2e-4, "{} vs {approx}", m.eval(t));
    }

    #[test]
    fn oracle_reference_values() {
        let m = pam_second_moment_oracle(0.5, 1.0, 2.0, ORACLE_STEP).unwrap();
        assert!((m.eval(1.0) - 1.9523).abs() < 5e-4, "{}", m.eval(1.0));
        assert!((m.eval(2.0) - 2.7739).abs() < 5e-4, "{}", m.eval(2.0));
        assert!(m.refinement_change < ORACLE_REFINEMENT_TOLERANCE);
    }

    #[test]
    fn oracle_coarse_grid_detected() {
        let err = pam_second_moment_oracle(0.5, 3.0, 1.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse(_)));
    }

    #[test]
    fn bounds_arithmetic() {
        let s = SigmaSpec::linear(1.0);
        assert_eq!(lyapunov_bounds(&s, 0.5, 2), (0.25, 16.0));
        assert_eq!(lyapunov_bounds(&s, 0.5, 3).0, 1.0);
    }

    #[test]
    fn time_ratio_per_exponent() {
        assert_eq!(ladder_time_ratio(2.0), 4);
        assert_eq!(ladder_time_ratio(1.5), 4);
        assert_eq!(ladder_time_ratio(1.0), 2);
    }

    #[test]
    fn zero_sigma_rate_is_vacuous() {
        let mut c = small(SigmaSpec::zero());
        c.eps = 0.5;
        c.n = 16;
        c.dt = default_dt_for(&c);
        let r = convergence_rate(&c, &[0.5, 0.25, 0.125], 0.5, 4).unwrap();
        assert!(r.fitted_slope.is_none());
        assert!(r.passed);
        assert!(r.statistics.iter().all(|s| s.median == 0.0));
    }

    fn default_dt_for(c: &SheConfig) -> f64 {
        crate::simulator::default_dt(c.walk.alpha, c.eps)
    }

    #[test]
    fn ladder_validation() {
        let c = small(SigmaSpec::linear(1.0));
        assert!(convergence_rate(&c, &[0.25, 0.125], 0.5, 4).is_err());
        assert!(convergence_rate(&c, &[0.25, 0.1, 0.05], 0.5, 4).is_err());
        assert!(convergence_rate(&c, &[0.25, 0.125, 0.0625], 1.5, 4).is_err());
    }

    #[test]
    fn increments_need_positive_gaps() {
        let c = small(SigmaSpec::linear(1.0));
        assert!(temporal_increment_scaling(&c, 0.1, &[0.0, c.dt], 10).is_err());
    }

    #[test]
    fn replica_runner_counts_aborts() {
        let out = run_replicas(1000, |r| {
            if r % 200 == 0 {
                Err(Error::Aborted {
                    time: 0.0,
                    reason: "test".into(),
                })
            } else {
                Ok(r)
            }
        })
        .unwrap();
        assert_eq!(out.aborted, 5);
        assert_eq!(out.values.len(), 995);
        let err = run_replicas(100, |r| {
            if r < 2 {
                Err(Error::Aborted {
                    time: 0.0,
                    reason: "test".into(),
                })
            } else {
                Ok(r)
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::TooManyAborts { aborted: 2, .. }));
    }
}
