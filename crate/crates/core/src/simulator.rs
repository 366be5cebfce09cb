//! Time stepping of the rescaled lattice system
//! `dU = ε^{-α} L U dt + ε^{-1/2} σ(U) dB` on a periodic box, started from
//! `U ≡ 1`.
//!
//! Both schemes are written as `U' = U + Σ_k c_k (U[j+k] − U[j]) + noise`,
//! with `c_k = dt ε^{-α} q(k)` for Euler and `c_k = H_dt(k)` for the
//! split-step scheme. Constant fields are then exact fixed points of the
//! drift. Wide kernels are applied spectrally instead.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::kernels::{discrete_transition_from_symbol, DiscreteKernelTable};
use crate::noise::{CoupledStreams, DerivedSheet, NoiseIncrement, SheetGrid};
use crate::output::Record;
use crate::walk::WalkModel;

/// The four admissible noise coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaKind {
    /// `λz`
    Linear,
    /// `λ|z|`
    AbsLinear,
    /// `min(λ|z|, c)`
    ClippedLinear,
    /// `λ · clamp(1 + z, 0, 2)`
    AffineBounded,
}

impl SigmaKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SigmaKind::Linear => "linear",
            SigmaKind::AbsLinear => "abs_linear",
            SigmaKind::ClippedLinear => "clipped_linear",
            SigmaKind::AffineBounded => "affine_bounded",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => SigmaKind::Linear,
            "abs_linear" => SigmaKind::AbsLinear,
            "clipped_linear" => SigmaKind::ClippedLinear,
            "affine_bounded" => SigmaKind::AffineBounded,
            other => return Err(invalid(format!("unknown sigma kind {other:?}"))),
        })
    }
}

/// A noise coefficient `σ` with its Lipschitz and lower-linear constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSpec {
    pub kind: SigmaKind,
    pub lambda: f64,
    pub clip: Option<f64>,
}

impl SigmaSpec {
    pub fn new(kind: SigmaKind, lambda: f64, clip: Option<f64>) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(invalid("sigma slope must be finite"));
        }
        match (kind, clip) {
            (SigmaKind::ClippedLinear, Some(c)) if c > 0.0 && c.is_finite() => {}
            (SigmaKind::ClippedLinear, _) => return Err(invalid("clipped_linear needs a positive finite clip")),
            (_, Some(_)) => return Err(invalid("only clipped_linear takes a clip")),
            _ => {}
        }
        if kind != SigmaKind::Linear && lambda < 0.0 {
            return Err(invalid(format!("{} needs lambda ≥ 0", kind.as_str())));
        }
        Ok(Self { kind, lambda, clip })
    }

    pub fn linear(lambda: f64) -> Self {
        Self::new(SigmaKind::Linear, lambda, None).expect("finite slope")
    }

    pub fn abs_linear(lambda: f64) -> Result<Self> {
        Self::new(SigmaKind::AbsLinear, lambda, None)
    }

    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match self.kind {
            SigmaKind::Linear => self.lambda * z,
            SigmaKind::AbsLinear => self.lambda * z.abs(),
            SigmaKind::ClippedLinear => (self.lambda * z.abs()).min(self.clip.unwrap_or(f64::INFINITY)),
            SigmaKind::AffineBounded => self.lambda * (1.0 + z).clamp(0.0, 2.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda == 0.0
    }

    /// `σ(0) = 0`.
    pub fn fixes_zero(&self) -> bool {
        self.kind != SigmaKind::AffineBounded || self.is_zero()
    }

    pub fn lip(&self) -> f64 {
        self.lambda.abs()
    }

    /// Largest `L` with `L|z| ≤ σ(z)`; for the linear kind this holds on
    /// `z ≥ 0`, where the exact solution lives.
    pub fn l_lower(&self) -> f64 {
        match self.kind {
            SigmaKind::Linear => self.lambda.max(0.0),
            SigmaKind::AbsLinear => self.lambda,
            SigmaKind::ClippedLinear | SigmaKind::AffineBounded => 0.0,
        }
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push("kind", self.kind.as_str());
        r.push("lambda", self.lambda);
        r.push("clip", self.clip.unwrap_or(f64::NAN));
        r.push("lip", self.lip());
        r.push("l_lower", self.l_lower());
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Splitstep,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Splitstep => "splitstep",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "splitstep" => Ok(Scheme::Splitstep),
            other => Err(invalid(format!("unknown scheme {other:?}"))),
        }
    }
}

/// `min(ε^α / 4, 1e-3)`.
pub fn default_dt(alpha: f64, eps: f64) -> f64 {
    (eps.powf(alpha) / 4.0).min(1e-3)
}

/// Smallest power of two `N` with `N ε ≥ extent`.
pub fn default_box_sites(eps: f64, extent: f64) -> usize {
    ((extent / eps).ceil() as usize).next_power_of_two().max(2)
}

/// One lattice run: walk, resolution, horizon, coefficient and keying.
#[derive(Debug, Clone, PartialEq)]
pub struct SheConfig {
    pub walk: Arc<WalkModel>,
    pub eps: f64,
    pub dt: f64,
    pub horizon: f64,
    pub n: usize,
    pub sigma: SigmaSpec,
    pub scheme: Scheme,
    pub seed: u64,
    pub replica: u64,
    pub snapshot_times: Vec<f64>,
    /// Drift speed-up `ε^{-ρ}`; the walk's own `α` unless overridden.
    pub rho_exponent: f64,
}

impl SheConfig {
    /// Defaults: `dt` from [`default_dt`], box from [`default_box_sites`] with
    /// extent 20, horizon 1, split-step, seed 0, replica 0, no snapshots.
    pub fn new(walk: WalkModel, eps: f64, sigma: SigmaSpec) -> Self {
        let alpha = walk.alpha;
        Self {
            walk: Arc::new(walk),
            eps,
            dt: default_dt(alpha, eps),
            horizon: 1.0,
            n: default_box_sites(eps, 20.0),
            sigma,
            scheme: Scheme::Splitstep,
            seed: 0,
            replica: 0,
            snapshot_times: Vec::new(),
            rho_exponent: alpha,
        }
    }

    pub fn drift_rate(&self) -> f64 {
        self.eps.powf(-self.rho_exponent)
    }

    pub fn steps(&self) -> Result<u64> {
        steps_for(self.horizon, self.dt)
    }

    pub fn sheet(&self) -> Result<SheetGrid> {
        SheetGrid::new(self.eps, self.dt, self.n, self.seed, self.replica)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("T must be nonnegative, got {}", self.horizon)));
        }
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return Err(invalid(format!("box needs an even site count ≥ 2, got {}", self.n)));
        }
        if self.n < 2 * self.walk.measure.truncation_radius() {
            return Err(invalid("box is smaller than twice the jump radius"));
        }
        if !(self.rho_exponent > 0.0 && self.rho_exponent.is_finite()) {
            return Err(invalid("rho_exponent must be positive"));
        }
        if self.scheme == Scheme::Euler && self.dt * self.drift_rate() > 0.25 * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "euler needs dt ≤ eps^alpha / 4 = {}",
                0.25 / self.drift_rate()
            )));
        }
        self.steps()?;
        for &t in &self.snapshot_times {
            if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
                return Err(invalid(format!("snapshot time {t} is outside [0, T]")));
            }
            steps_for(t, self.dt)?;
        }
        Ok(())
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.push("alpha", self.walk.alpha);
        r.push("nu", self.walk.nu);
        r.push("eps", self.eps);
        r.push("dt", self.dt);
        r.push("T", self.horizon);
        r.push("box_sites", self.n);
        r.extend_prefixed("sigma", &self.sigma.to_record());
        r.push("scheme", self.scheme.as_str());
        r.push("seed", self.seed);
        r.push("rho_exponent", self.rho_exponent);
        r
    }
}

/// Number of `dt` steps in `t`; `t` must be a multiple of `dt`.
pub fn steps_for(t: f64, dt: f64) -> Result<u64> {
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * t.max(dt) {
        return Err(invalid(format!("time {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as u64)
}

/// The lattice field at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub t: f64,
    pub values: Vec<f64>,
}

impl FieldState {
    pub fn ones(n: usize) -> Self {
        Self {
            t: 0.0,
            values: vec![1.0; n],
        }
    }
}

/// Kernel coefficients with magnitude below this fraction of the largest are
/// dropped from direct convolution.
pub const TAP_FLOOR: f64 = 1e-15;

/// Kernels wider than this many sites on each side are applied by FFT.
pub const DIRECT_WIDTH_LIMIT: usize = 48;

#[derive(Clone)]
enum Drift {
    /// `c[k]` for offsets `1..=w`; symmetric.
    Direct { coeffs: Vec<f64> },
    /// Multiplier `ĥ(k) − 1` on the torus frequencies.
    Spectral {
        multiplier: Vec<f64>,
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
    },
}

impl std::fmt::Debug for Drift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Drift::Direct { coeffs } => write!(f, "Direct(width {})", coeffs.len()),
            Drift::Spectral { multiplier, .. } => write!(f, "Spectral({} modes)", multiplier.len()),
        }
    }
}

impl Drift {
    /// From a symmetric kernel on the torus (`kernel[r]`, residue `r`) whose
    /// off-centre coefficients are `c_k`.
    fn from_kernel(kernel: &[f64]) -> Self {
        let n = kernel.len();
        let peak = kernel[1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let width = (1..=n / 2).rfind(|&k| kernel[k].abs() > TAP_FLOOR * peak).unwrap_or(0);
        if width <= DIRECT_WIDTH_LIMIT && 2 * width < n {
            let coeffs = (1..=width).map(|k| 0.5 * (kernel[k] + kernel[n - k])).collect();
            return Drift::Direct { coeffs };
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut buf: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf[0] = Complex::new(0.0, 0.0);
        forward.process(&mut buf);
        let off_mass: f64 = kernel[1..].iter().sum();
        let multiplier = buf.iter().map(|c| c.re - off_mass).collect();
        Drift::Spectral {
            multiplier,
            forward,
            inverse,
        }
    }

    /// `out[j] = u[j] + Σ_k c_k (u[j+k] − u[j])`.
    #[inline(always)]
    fn apply(&self, u: &[f64], out: &mut [f64], work: &mut Workspace) {
        let n = u.len();
        match self {
            Drift::Direct { coeffs } => {
                let w = coeffs.len();
                let ext = &mut work.ext;
                ext.clear();
                ext.extend_from_slice(&u[n - w..]);
                ext.extend_from_slice(u);
                ext.extend_from_slice(&u[..w]);
                direct_taps(coeffs, ext, u, out);
            }
            Drift::Spectral {
                multiplier,
                forward,
                inverse,
            } => {
                let buf = &mut work.spectrum;
                buf.clear();
                buf.extend(u.iter().map(|&v| Complex::new(v, 0.0)));
                work.scratch.resize(
                    forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len()),
                    Complex::new(0.0, 0.0),
                );
                forward.process_with_scratch(buf, &mut work.scratch);
                for (b, m) in buf.iter_mut().zip(multiplier) {
                    *b *= *m;
                }
                inverse.process_with_scratch(buf, &mut work.scratch);
                let scale = 1.0 / n as f64;
                for ((o, b), &x) in out.iter_mut().zip(buf.iter()).zip(u) {
                    *o = x + b.re * scale;
                }
            }
        }
    }
}

/// Per-trajectory scratch buffers.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    ext: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

/// Everything about a configuration that is shared by its replicas.
#[derive(Debug, Clone)]
pub struct Propagator {
    config: SheConfig,
    drift: Drift,
    steps: u64,
    snapshot_steps: Vec<u64>,
    noise_scale: f64,
}

impl Propagator {
    pub fn new(config: &SheConfig) -> Result<Self> {
        config.validate()?;
        let symbol = config.walk.torus_symbol(config.n)?;
        let kernel = match config.scheme {
            Scheme::Euler => {
                let rate = config.dt * config.drift_rate();
                let mut q = config.walk.measure.on_torus(config.n)?;
                for v in &mut q {
                    *v *= rate;
                }
                q
            }
            Scheme::Splitstep => heat_table(&symbol, config)?.raw().to_vec(),
        };
        Self::with_kernel(config, &kernel)
    }

    fn with_kernel(config: &SheConfig, kernel: &[f64]) -> Result<Self> {
        let steps = config.steps()?;
        let mut snapshot_steps = config
            .snapshot_times
            .iter()
            .map(|&t| steps_for(t, config.dt))
            .collect::<Result<Vec<_>>>()?;
        snapshot_steps.sort_unstable();
        snapshot_steps.dedup();
        Ok(Self {
            config: config.clone(),
            drift: Drift::from_kernel(kernel),
            steps,
            snapshot_steps,
            noise_scale: config.eps.powf(-0.5),
        })
    }

    pub fn config(&self) -> &SheConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One step from `u` into `out` with increments `noise`.
    pub fn advance(&self, u: &[f64], noise: &[f64], out: &mut [f64], work: &mut Workspace) {
        #[cfg(target_arch = "x86_64")]
        if wide_vectors() {
            // SAFETY: the required features were detected at runtime.
            unsafe { self.advance_avx512(u, noise, out, work) };
            return;
        }
        self.advance_generic(u, noise, out, work);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,avx512f")]
    unsafe fn advance_avx512(&self, u: &[f64], noise: &[f64], out: &mut [f64], work: &mut Workspace) {
        self.advance_generic(u, noise, out, work);
    }

    #[inline(always)]
    fn advance_generic(&self, u: &[f64], noise: &[f64], out: &mut [f64], work: &mut Workspace) {
        self.drift.apply(u, out, work);
        add_noise(&self.config.sigma, self.noise_scale, u, noise, out);
    }

    /// Runs replica `replica` from `U ≡ 1` to the horizon.
    pub fn run(&self, replica: u64) -> Result<Trajectory> {
        let sheet = SheetGrid {
            replica,
            ..self.config.sheet()?
        };
        self.run_with(DerivedSheet::identity(sheet))
    }

    /// As [`Propagator::run`] with increments taken from `sheet`.
    pub fn run_with(&self, sheet: DerivedSheet) -> Result<Trajectory> {
        let n = self.config.n;
        if sheet.sites() != n {
            return Err(invalid("noise sheet does not match the box"));
        }
        let mut work = Workspace::default();
        let mut u = vec![1.0; n];
        let mut noise = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut sheet_work = Vec::new();
        let mut tracker = Tracker::new();
        let mut snapshots = Vec::with_capacity(self.snapshot_steps.len());
        let mut snap = self.snapshot_steps.iter().peekable();
        if snap.peek() == Some(&&0) {
            snapshots.push(FieldState::ones(n));
            snap.next();
        }
        let noiseless = self.config.sigma.is_zero();
        for step in 0..self.steps {
            if noiseless {
                noise.fill(0.0);
            } else {
                sheet.fill(step, &mut noise, &mut sheet_work);
            }
            self.advance(&u, &noise, &mut next, &mut work);
            std::mem::swap(&mut u, &mut next);
            let t = (step + 1) as f64 * self.config.dt;
            tracker.observe(&u, t)?;
            if snap.peek() == Some(&&(step + 1)) {
                snapshots.push(FieldState { t, values: u.clone() });
                snap.next();
            }
        }
        Ok(Trajectory {
            final_state: FieldState {
                t: self.steps as f64 * self.config.dt,
                values: u,
            },
            snapshots,
            negative_site_steps: tracker.negative,
            site_steps: tracker.observed,
            field_min: tracker.min,
            field_max: tracker.max,
        })
    }
}

fn heat_table(symbol: &[f64], config: &SheConfig) -> Result<DiscreteKernelTable> {
    discrete_transition_from_symbol(symbol, config.rho_exponent, config.eps, config.dt)
}

#[inline(always)]
fn add_noise(sigma: &SigmaSpec, scale: f64, u: &[f64], noise: &[f64], out: &mut [f64]) {
    if sigma.is_zero() {
        return;
    }
    let l = sigma.lambda * scale;
    let iter = out.iter_mut().zip(u).zip(noise);
    match sigma.kind {
        SigmaKind::Linear => iter.for_each(|((o, &x), &b)| *o += l * x * b),
        SigmaKind::AbsLinear => iter.for_each(|((o, &x), &b)| *o += l * x.abs() * b),
        SigmaKind::ClippedLinear | SigmaKind::AffineBounded => {
            iter.for_each(|((o, &x), &b)| *o += scale * sigma.eval(x) * b)
        }
    }
}

/// `out[j] = u[j] + Σ_k c_k (u[j+k] − u[j])` with `ext` holding `u` padded
/// by `coeffs.len()` wrapped sites on each side.
#[inline(always)]
fn direct_taps(coeffs: &[f64], ext: &[f64], u: &[f64], out: &mut [f64]) {
    let n = u.len();
    let w = coeffs.len();
    // Blocked so the accumulators stay in registers across taps.
    const BLOCK: usize = 32;
    let full = n - n % BLOCK;
    for base in (0..full).step_by(BLOCK) {
        let x: &[f64; BLOCK] = u[base..base + BLOCK].try_into().unwrap();
        let mut acc = [0.0f64; BLOCK];
        for (k, &c) in coeffs.iter().enumerate() {
            let off = k + 1;
            let r: &[f64; BLOCK] = ext[w + base + off..w + base + off + BLOCK].try_into().unwrap();
            let l: &[f64; BLOCK] = ext[w + base - off..w + base - off + BLOCK].try_into().unwrap();
            for i in 0..BLOCK {
                acc[i] += c * ((r[i] - x[i]) + (l[i] - x[i]));
            }
        }
        for i in 0..BLOCK {
            out[base + i] = x[i] + acc[i];
        }
    }
    for j in full..n {
        let x = u[j];
        let mut acc = 0.0;
        for (k, &c) in coeffs.iter().enumerate() {
            let off = k + 1;
            acc += c * ((ext[w + j + off] - x) + (ext[w + j - off] - x));
        }
        out[j] = x + acc;
    }
}

#[cfg(target_arch = "x86_64")]
fn wide_vectors() -> bool {
    is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("avx2")
}

/// Field magnitude treated as blow-up.
pub const OVERFLOW_LIMIT: f64 = 1e100;

struct Tracker {
    negative: u64,
    observed: u64,
    min: f64,
    max: f64,
}

impl Tracker {
    fn new() -> Self {
        Self {
            negative: 0,
            observed: 0,
            min: 1.0,
            max: 1.0,
        }
    }

    fn observe(&mut self, u: &[f64], t: f64) -> Result<()> {
        #[cfg(target_arch = "x86_64")]
        if wide_vectors() {
            // SAFETY: the required features were detected at runtime.
            return unsafe { self.observe_avx512(u, t) };
        }
        self.observe_generic(u, t)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,avx512f")]
    unsafe fn observe_avx512(&mut self, u: &[f64], t: f64) -> Result<()> {
        self.observe_generic(u, t)
    }

    #[inline(always)]
    fn observe_generic(&mut self, u: &[f64], t: f64) -> Result<()> {
        let mut neg = 0u64;
        let mut bad = false;
        let (mut lo, mut hi) = (self.min, self.max);
        for &v in u {
            neg += u64::from(v < 0.0);
            lo = if v < lo { v } else { lo };
            hi = if v > hi { v } else { hi };
            // also true for NaN
            bad |= !(v.abs() <= OVERFLOW_LIMIT);
        }
        if bad {
            let reason = if u.iter().any(|v| v.is_nan()) {
                "NaN in field".to_string()
            } else {
                format!("field magnitude exceeds {OVERFLOW_LIMIT:e}")
            };
            return Err(Error::Aborted { time: t, reason });
        }
        self.negative += neg;
        self.observed += u.len() as u64;
        self.min = lo;
        self.max = hi;
        Ok(())
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub final_state: FieldState,
    /// Fields at the configured snapshot times, in time order.
    pub snapshots: Vec<FieldState>,
    pub negative_site_steps: u64,
    pub site_steps: u64,
    pub field_min: f64,
    pub field_max: f64,
}

impl Trajectory {
    pub fn negative_fraction(&self) -> f64 {
        if self.site_steps == 0 {
            0.0
        } else {
            self.negative_site_steps as f64 / self.site_steps as f64
        }
    }
}

/// One Euler step: `U + dt ε^{-α} L U + ε^{-1/2} σ(U) ΔB`.
pub fn step_euler(state: &FieldState, config: &SheConfig, noise: &NoiseIncrement) -> Result<FieldState> {
    let cfg = SheConfig {
        scheme: Scheme::Euler,
        horizon: config.dt,
        snapshot_times: Vec::new(),
        ..config.clone()
    };
    let p = Propagator::new(&cfg)?;
    single_step(&p, state, noise)
}

/// One split step: `H_dt ⊛ U + ε^{-1/2} σ(U) ΔB`, with `σ` read before the
/// heat flow so both schemes share the same noise term.
pub fn step_splitstep(
    state: &FieldState,
    config: &SheConfig,
    noise: &NoiseIncrement,
    heat: &DiscreteKernelTable,
) -> Result<FieldState> {
    if heat.n != config.n || (heat.t - config.dt).abs() > 1e-15 * config.dt || heat.eps != config.eps {
        return Err(invalid("heat table does not match the configuration"));
    }
    let cfg = SheConfig {
        scheme: Scheme::Splitstep,
        horizon: config.dt,
        snapshot_times: Vec::new(),
        ..config.clone()
    };
    cfg.validate()?;
    let p = Propagator::with_kernel(&cfg, heat.raw())?;
    single_step(&p, state, noise)
}

fn single_step(p: &Propagator, state: &FieldState, noise: &NoiseIncrement) -> Result<FieldState> {
    let n = p.config.n;
    if state.values.len() != n || noise.values.len() != n {
        return Err(invalid("field and noise must match the box"));
    }
    let mut out = vec![0.0; n];
    p.advance(&state.values, &noise.values, &mut out, &mut Workspace::default());
    let t = state.t + p.config.dt;
    Tracker::new().observe(&out, t)?;
    Ok(FieldState { t, values: out })
}

/// Runs `config` for its own replica.
pub fn simulate(config: &SheConfig) -> Result<Trajectory> {
    Propagator::new(config)?.run(config.replica)
}

/// Paired run of two resolutions on one sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutcome {
    pub fine: FieldState,
    pub coarse: FieldState,
    /// `max_j |U_coarse(jε) − U_fine(jε)|` at each comparison time.
    pub differences: Vec<(f64, f64)>,
    pub sup_difference: f64,
}

/// Prepared pair for [`simulate_coupled`]; shared across replicas.
#[derive(Debug, Clone)]
pub struct CoupledPropagator {
    fine: Propagator,
    coarse: Propagator,
    ratio: u64,
    compare_steps: Vec<u64>,
}

impl CoupledPropagator {
    /// The comparison times are the coarse configuration's snapshot times,
    /// or 50 equally spaced times over `(0, T]` when none are given.
    pub fn new(fine: &SheConfig, coarse: &SheConfig) -> Result<Self> {
        if ((coarse.eps - 2.0 * fine.eps) / coarse.eps).abs() > 1e-12 || coarse.n * 2 != fine.n {
            return Err(invalid("coarse resolution must be exactly twice the fine one"));
        }
        if fine.walk != coarse.walk || fine.sigma != coarse.sigma || fine.horizon != coarse.horizon {
            return Err(invalid("coupled runs must share walk, sigma and T"));
        }
        let grid_f = fine.sheet()?;
        let grid_c = coarse.sheet()?;
        let streams = CoupledStreams::new(grid_f, grid_c)?;
        let compare_times = if coarse.snapshot_times.is_empty() {
            let steps = coarse.steps()?;
            let every = (steps / 50).max(1);
            (1..=steps / every).map(|i| (i * every) as f64 * coarse.dt).collect()
        } else {
            coarse.snapshot_times.clone()
        };
        let mut compare_steps = compare_times
            .iter()
            .map(|&t| steps_for(t, coarse.dt))
            .collect::<Result<Vec<_>>>()?;
        compare_steps.sort_unstable();
        compare_steps.dedup();
        let strip = |c: &SheConfig| SheConfig {
            snapshot_times: Vec::new(),
            ..c.clone()
        };
        Ok(Self {
            fine: Propagator::new(&strip(fine))?,
            coarse: Propagator::new(&strip(coarse))?,
            ratio: streams.ratio,
            compare_steps,
        })
    }

    pub fn compare_count(&self) -> usize {
        self.compare_steps.len()
    }

    pub fn run(&self, replica: u64) -> Result<CoupledOutcome> {
        let (nf, nc) = (self.fine.config.n, self.coarse.config.n);
        let fine_sheet = SheetGrid {
            replica,
            ..self.fine.config.sheet()?
        };
        let mut wf = Workspace::default();
        let mut wc = Workspace::default();
        let mut uf = vec![1.0; nf];
        let mut uc = vec![1.0; nc];
        let mut nextf = vec![0.0; nf];
        let mut nextc = vec![0.0; nc];
        let mut noise_f = vec![0.0; nf];
        let mut half = vec![0.0; nc];
        let mut noise_c = vec![0.0; nc];
        let mut track_f = Tracker::new();
        let mut track_c = Tracker::new();
        let mut differences = Vec::with_capacity(self.compare_steps.len());
        let mut cmp = self.compare_steps.iter().peekable();
        let noiseless = self.fine.config.sigma.is_zero();
        for k in 0..self.coarse.steps {
            noise_c.fill(0.0);
            for sub in 0..self.ratio {
                let step = k * self.ratio + sub;
                if noiseless {
                    noise_f.fill(0.0);
                } else {
                    fine_sheet.fill(step, &mut noise_f);
                }
                crate::noise::coarsen_into(&noise_f, &mut half)?;
                for (c, h) in noise_c.iter_mut().zip(&half) {
                    *c += h;
                }
                self.fine.advance(&uf, &noise_f, &mut nextf, &mut wf);
                std::mem::swap(&mut uf, &mut nextf);
                track_f.observe(&uf, (step + 1) as f64 * self.fine.config.dt)?;
            }
            self.coarse.advance(&uc, &noise_c, &mut nextc, &mut wc);
            std::mem::swap(&mut uc, &mut nextc);
            let t = (k + 1) as f64 * self.coarse.config.dt;
            track_c.observe(&uc, t)?;
            if cmp.peek() == Some(&&(k + 1)) {
                differences.push((t, sup_pair_difference(&uc, &uf)));
                cmp.next();
            }
        }
        let sup_difference = differences.iter().map(|d| d.1).fold(0.0, f64::max);
        let horizon = self.coarse.steps as f64 * self.coarse.config.dt;
        Ok(CoupledOutcome {
            fine: FieldState { t: horizon, values: uf },
            coarse: FieldState { t: horizon, values: uc },
            differences,
            sup_difference,
        })
    }
}

fn sup_pair_difference(coarse: &[f64], fine: &[f64]) -> f64 {
    coarse
        .iter()
        .zip(fine.iter().step_by(2))
        .map(|(c, f)| (c - f).abs())
        .fold(0.0, f64::max)
}

/// Runs both resolutions on the sheet of the fine configuration's replica.
pub fn simulate_coupled(fine: &SheConfig, coarse: &SheConfig) -> Result<CoupledOutcome> {
    if fine.seed != coarse.seed || fine.replica != coarse.replica {
        return Err(invalid("coupled runs must share seed and replica"));
    }
    CoupledPropagator::new(fine, coarse)?.run(fine.replica)
}

/// Rows `(t, j, x, value)` for a set of field snapshots.
pub fn snapshot_records(states: &[FieldState], eps: f64) -> Vec<Record> {
    let mut out = Vec::new();
    for s in states {
        for (j, &v) in s.values.iter().enumerate() {
            let mut r = Record::new();
            r.push("t", s.t);
            r.push("j", j);
            r.push("x", j as f64 * eps);
            r.push("value", v);
            out.push(r);
        }
    }
    out
}

pub const SNAPSHOT_HEADER: [&str; 4] = ["t", "j", "x", "value"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::discrete_transition;
    use crate::noise::sample_increments;
    use crate::walk::{make_simple_walk, make_stable_tail_walk};

    fn small(sigma: SigmaSpec, scheme: Scheme) -> SheConfig {
        let mut c = SheConfig::new(make_simple_walk(), 0.2, sigma);
        c.n = 64;
        c.scheme = scheme;
        c.horizon = 0.2;
        c.dt = 0.01;
        c
    }

    #[test]
    fn sigma_constants() {
        let s = SigmaSpec::linear(1.5);
        assert_eq!((s.lip(), s.l_lower()), (1.5, 1.5));
        let c = SigmaSpec::new(SigmaKind::ClippedLinear, 2.0, Some(0.5)).unwrap();
        assert_eq!(c.eval(10.0), 0.5);
        assert_eq!(c.eval(-0.1), 0.2);
        assert_eq!(c.l_lower(), 0.0);
        let a = SigmaSpec::new(SigmaKind::AffineBounded, 1.0, None).unwrap();
        assert_eq!(a.eval(0.0), 1.0);
        assert_eq!(a.eval(5.0), 2.0);
        assert_eq!(a.eval(-3.0), 0.0);
        assert!(!a.fixes_zero());
        assert!(SigmaSpec::new(SigmaKind::ClippedLinear, 1.0, None).is_err());
        assert!(SigmaSpec::new(SigmaKind::AbsLinear, -1.0, None).is_err());
        assert!(SigmaSpec::new(SigmaKind::Linear, 1.0, Some(1.0)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn sigma_is_lipschitz(lambda in 0.0f64..3.0, clip in 0.1f64..5.0, x in -10.0f64..10.0, y in -10.0f64..10.0) {
            for s in [
                SigmaSpec::linear(lambda),
                SigmaSpec::new(SigmaKind::AbsLinear, lambda, None).unwrap(),
                SigmaSpec::new(SigmaKind::ClippedLinear, lambda, Some(clip)).unwrap(),
                SigmaSpec::new(SigmaKind::AffineBounded, lambda, None).unwrap(),
            ] {
                proptest::prop_assert!((s.eval(x) - s.eval(y)).abs() <= s.lip() * (x - y).abs() * (1.0 + 1e-12) + 1e-15);
                if x >= 0.0 {
                    proptest::prop_assert!(s.l_lower() * x <= s.eval(x) + 1e-12);
                }
                proptest::prop_assert!(s.l_lower() <= s.lip());
            }
        }
    }

    #[test]
    fn zero_sigma_keeps_ones_exactly() {
        for scheme in [Scheme::Euler, Scheme::Splitstep] {
            let tr = simulate(&small(SigmaSpec::zero(), scheme)).unwrap();
            assert!(tr.final_state.values.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn time_zero_returns_initial_field() {
        let mut c = small(SigmaSpec::linear(1.0), Scheme::Splitstep);
        c.horizon = 0.0;
        let tr = simulate(&c).unwrap();
        assert_eq!(tr.final_state, FieldState::ones(64));
    }

    #[test]
    fn noise_free_relaxation_conserves_mass() {
        let c = small(SigmaSpec::zero(), Scheme::Euler);
        let zero = NoiseIncrement { values: vec![0.0; 64] };
        let mut s = FieldState {
            t: 0.0,
            values: (0..64).map(|j| (j as f64 * 0.3).sin() + 2.0).collect(),
        };
        let total: f64 = s.values.iter().sum();
        for _ in 0..50 {
            s = step_euler(&s, &c, &zero).unwrap();
        }
        assert!((s.values.iter().sum::<f64>() - total).abs() < 1e-10 * 50.0);
        assert!((s.t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn splitstep_matches_semigroup_composition() {
        let c = small(SigmaSpec::zero(), Scheme::Splitstep);
        let heat = discrete_transition(&c.walk, c.eps, c.dt, c.n).unwrap();
        let zero = NoiseIncrement { values: vec![0.0; 64] };
        let mut s = FieldState {
            t: 0.0,
            values: vec![0.0; 64],
        };
        s.values[0] = 1.0;
        for _ in 0..10 {
            s = step_splitstep(&s, &c, &zero, &heat).unwrap();
        }
        let exact = discrete_transition(&c.walk, c.eps, 10.0 * c.dt, c.n).unwrap();
        for j in 0..64 {
            assert!((s.values[j] - exact.raw()[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_path_conserves_mass() {
        let walk = make_stable_tail_walk(1.5, 200, 512).unwrap();
        let mut c = SheConfig::new(walk, 0.1, SigmaSpec::zero());
        c.n = 512;
        c.horizon = 0.05;
        c.dt = 0.005;
        for scheme in [Scheme::Euler, Scheme::Splitstep] {
            c.scheme = scheme;
            let p = Propagator::new(&c).unwrap();
            assert!(matches!(p.drift, Drift::Spectral { .. }));
            let u: Vec<f64> = (0..512).map(|j| ((j * j) % 7) as f64).collect();
            let mut out = vec![0.0; 512];
            p.advance(&u, &[0.0; 512], &mut out, &mut Workspace::default());
            let (a, b): (f64, f64) = (u.iter().sum(), out.iter().sum());
            assert!((a - b).abs() < 1e-10 * a);
        }
    }

    #[test]
    fn euler_stability_enforced() {
        let mut c = small(SigmaSpec::zero(), Scheme::Euler);
        c.dt = 0.02;
        assert!(simulate(&c).is_err());
        c.scheme = Scheme::Splitstep;
        assert!(simulate(&c).is_ok());
    }

    #[test]
    fn deterministic_rerun() {
        let mut c = small(SigmaSpec::linear(1.0), Scheme::Splitstep);
        c.seed = 17;
        c.replica = 3;
        c.snapshot_times = vec![0.1, 0.2];
        let a = simulate(&c).unwrap();
        let b = simulate(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshots.len(), 2);
        assert_eq!(a.snapshots[1].values, a.final_state.values);
    }

    #[test]
    fn single_steps_agree_with_propagator() {
        let c = small(SigmaSpec::linear(1.0), Scheme::Euler);
        let g = c.sheet().unwrap();
        let mut s = FieldState::ones(64);
        for k in 0..20 {
            s = step_euler(&s, &c, &sample_increments(&g, k)).unwrap();
        }
        let tr = simulate(&c).unwrap();
        assert_eq!(s.values, tr.final_state.values);
    }

    #[test]
    fn blow_up_aborts() {
        let mut c = small(SigmaSpec::linear(1e60), Scheme::Splitstep);
        c.horizon = 0.2;
        let err = simulate(&c).unwrap_err();
        assert!(matches!(err, Error::Aborted { .. }));
    }

    #[test]
    fn mean_one_small_box() {
        let mut c = small(SigmaSpec::linear(1.0), Scheme::Splitstep);
        c.horizon = 0.5;
        let p = Propagator::new(&c).unwrap();
        let reps = 2000;
        let vals: Vec<f64> = (0..reps).map(|r| p.run(r).unwrap().final_state.values[0]).collect();
        let m = vals.iter().sum::<f64>() / reps as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((m - 1.0).abs() < 3.0 * (v / reps as f64).sqrt(), "{m}");
    }

    #[test]
    fn negative_fraction_shrinks_with_dt() {
        let mut c = SheConfig::new(make_simple_walk(), 0.1, SigmaSpec::linear(1.0));
        c.n = 64;
        c.horizon = 0.2;
        c.scheme = Scheme::Splitstep;
        let frac = |dt: f64| {
            let cfg = SheConfig { dt, ..c.clone() };
            let p = Propagator::new(&cfg).unwrap();
            let (mut neg, mut tot) = (0u64, 0u64);
            for r in 0..40 {
                let t = p.run(r).unwrap();
                neg += t.negative_site_steps;
                tot += t.site_steps;
            }
            neg as f64 / tot as f64
        };
        let coarse = frac(0.01);
        let fine = frac(0.0025);
        assert!(coarse > 0.0);
        assert!(fine < coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn coupled_trivial_cases() {
        let mut fine = SheConfig::new(make_simple_walk(), 0.1, SigmaSpec::zero());
        fine.n = 128;
        fine.dt = 0.0025;
        fine.horizon = 0.1;
        let coarse = SheConfig {
            eps: 0.2,
            n: 64,
            dt: 0.01,
            ..fine.clone()
        };
        let out = simulate_coupled(&fine, &coarse).unwrap();
        assert_eq!(out.sup_difference, 0.0);
        assert!(out.fine.values.iter().all(|&v| v == 1.0));

        let noisy_f = SheConfig {
            sigma: SigmaSpec::linear(1.0),
            ..fine.clone()
        };
        let noisy_c = SheConfig {
            sigma: SigmaSpec::linear(1.0),
            ..coarse.clone()
        };
        let out = simulate_coupled(&noisy_f, &noisy_c).unwrap();
        assert!(out.sup_difference > 0.0);
        assert_eq!(out.differences.len(), 10);
        // the coupled fine field is the stand-alone fine trajectory
        assert_eq!(out.fine.values, simulate(&noisy_f).unwrap().final_state.values);

        let bad = SheConfig { dt: 0.003, ..coarse };
        assert!(simulate_coupled(&fine, &bad).is_err());
    }
}
