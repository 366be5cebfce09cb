//! Discretized Brownian-sheet increments.
//!
//! Every Gaussian is a pure function of `(seed, replica, site, step)`: one
//! Philox4x32-10 block keyed by the seed, with counter
//! `(site / 2, step, replica_lo, replica_hi)`, yields the deviates for sites
//! `2m` and `2m + 1` through an inverse-CDF transform. Coarser resolutions are
//! built from a finer sheet by exact partition sums, so several lattices can
//! be driven by one realization.

use crate::error::{invalid, Result};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let p0 = u64::from(PHILOX_M0) * u64::from(c[0]);
        let p1 = u64::from(PHILOX_M1) * u64::from(c[2]);
        let (hi0, lo0) = ((p0 >> 32) as u32, p0 as u32);
        let (hi1, lo1) = ((p1 >> 32) as u32, p1 as u32);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Uniform on the open interval `(0, 1)` from the top 52 bits, equal to
/// `((x >> 12) + 1/2) 2^-52`; both endpoints stay excluded.
#[inline(always)]
pub fn open_unit(x: u64) -> f64 {
    // exponent-field trick: exact, and vectorizes without a u64 → f64 convert
    (f64::from_bits(0x3FF0_0000_0000_0000 | (x >> 12)) - 1.0) + HALF_ULP
}

const HALF_ULP: f64 = 1.0 / (1u64 << 53) as f64;

const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.38357751867269e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const ACKLAM_P_LOW: f64 = 0.02425;

/// Standard normal quantile by Acklam's rational approximation
/// (relative error below `1.2e-9`).
#[inline]
pub fn normal_quantile(p: f64) -> f64 {
    let (c, d) = (ACKLAM_C, ACKLAM_D);
    if p < ACKLAM_P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else if p <= 1.0 - ACKLAM_P_LOW {
        central_quantile(p)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    }
}

#[inline(always)]
fn central_quantile(p: f64) -> f64 {
    let (a, b) = (ACKLAM_A, ACKLAM_B);
    let q = p - 0.5;
    let r = q * q;
    (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
        / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
}

/// Keying and scale of one resolution of the sheet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SheetGrid {
    pub eps: f64,
    pub dt: f64,
    pub n: usize,
    pub seed: u64,
    pub replica: u64,
}

impl SheetGrid {
    pub fn new(eps: f64, dt: f64, n: usize, seed: u64, replica: u64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid(format!("sheet cell width must be positive, got {eps}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        if n < 2 {
            return Err(invalid("sheet needs at least two sites"));
        }
        if n / 2 > u32::MAX as usize {
            return Err(invalid("site count exceeds the counter range"));
        }
        Ok(Self {
            eps,
            dt,
            n,
            seed,
            replica,
        })
    }

    fn key(&self) -> [u32; 2] {
        [self.seed as u32, (self.seed >> 32) as u32]
    }

    /// Writes the increments of `step` into `out` (length `n`).
    pub fn fill(&self, step: u64, out: &mut [f64]) {
        assert_eq!(out.len(), self.n);
        let step = u32::try_from(step).expect("step index exceeds the counter range");
        let keys = BlockKeys {
            key: self.key(),
            step,
            replica: [self.replica as u32, (self.replica >> 32) as u32],
        };
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: the feature was detected at runtime.
                unsafe { fill_avx2(&keys, out) };
                let scale = self.dt.sqrt();
                out.iter_mut().for_each(|v| *v *= scale);
                return;
            }
        }
        fill_lanes(&keys, out);
        let scale = self.dt.sqrt();
        out.iter_mut().for_each(|v| *v *= scale);
    }
}

struct BlockKeys {
    key: [u32; 2],
    step: u32,
    replica: [u32; 2],
}

const LANES: usize = 16;

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,avx512f,avx512vl,avx512dq")]
unsafe fn fill_avx2(keys: &BlockKeys, out: &mut [f64]) {
    fill_lanes(keys, out)
}

/// Standard normals for every site in three passes: `LANES` Philox blocks
/// at a time into uniforms, the central quantile branch over the whole
/// buffer, then a scalar fix-up of the tail lanes (same bits as
/// [`normal_quantile`]).
#[inline(always)]
fn fill_lanes(keys: &BlockKeys, out: &mut [f64]) {
    let n = out.len();
    let pairs = n.div_ceil(2);
    let mut m0 = 0usize;
    let mut uni = [0.0f64; 2 * LANES];
    const LOW: u64 = 0xFFFF_FFFF;
    while m0 < pairs {
        // 32-bit words held in 64-bit lanes so the products map onto
        // widening vector multiplies without repacking
        let mut c0 = [0u64; LANES];
        for (i, c) in c0.iter_mut().enumerate() {
            *c = ((m0 + i) as u32).into();
        }
        let mut c1 = [u64::from(keys.step); LANES];
        let mut c2 = [u64::from(keys.replica[0]); LANES];
        let mut c3 = [u64::from(keys.replica[1]); LANES];
        let mut k = keys.key;
        for round in 0..10 {
            if round > 0 {
                k[0] = k[0].wrapping_add(PHILOX_W0);
                k[1] = k[1].wrapping_add(PHILOX_W1);
            }
            let (k0, k1) = (u64::from(k[0]), u64::from(k[1]));
            for i in 0..LANES {
                let p0 = u64::from(PHILOX_M0) * (c0[i] & LOW);
                let p1 = u64::from(PHILOX_M1) * (c2[i] & LOW);
                let n0 = (p1 >> 32) ^ c1[i] ^ k0;
                let n2 = (p0 >> 32) ^ c3[i] ^ k1;
                c0[i] = n0;
                c1[i] = p1 & LOW;
                c2[i] = n2;
                c3[i] = p0 & LOW;
            }
        }
        for i in 0..LANES {
            uni[2 * i] = open_unit(c0[i] | c1[i] << 32);
            uni[2 * i + 1] = open_unit(c2[i] | c3[i] << 32);
        }
        let start = 2 * m0;
        let take = (n - start).min(2 * LANES);
        out[start..start + take].copy_from_slice(&uni[..take]);
        m0 += LANES;
    }
    let mut tails = Vec::new();
    for (j, v) in out.iter().enumerate() {
        if !(ACKLAM_P_LOW..=1.0 - ACKLAM_P_LOW).contains(v) {
            tails.push((j, *v));
        }
    }
    for v in out.iter_mut() {
        *v = central_quantile(*v);
    }
    for (j, p) in tails {
        out[j] = normal_quantile(p);
    }
}

/// Per-site increments `ΔB_j` for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub values: Vec<f64>,
}

/// Increments of `grid` at `step`, each `N(0, dt)`.
pub fn sample_increments(grid: &SheetGrid, step: u64) -> NoiseIncrement {
    let mut values = vec![0.0; grid.n];
    grid.fill(step, &mut values);
    NoiseIncrement { values }
}

/// `coarse[j] = (fine[2j] + fine[2j+1]) / √2`.
pub fn coarsen(fine: &NoiseIncrement) -> Result<NoiseIncrement> {
    let mut values = vec![0.0; fine.values.len() / 2];
    coarsen_into(&fine.values, &mut values)?;
    Ok(NoiseIncrement { values })
}

pub(crate) fn coarsen_into(fine: &[f64], coarse: &mut [f64]) -> Result<()> {
    if !fine.len().is_multiple_of(2) {
        return Err(invalid(format!("cannot coarsen {} sites", fine.len())));
    }
    assert_eq!(coarse.len(), fine.len() / 2);
    for (c, f) in coarse.iter_mut().zip(fine.chunks_exact(2)) {
        *c = (f[0] + f[1]) * std::f64::consts::FRAC_1_SQRT_2;
    }
    Ok(())
}

/// Increments of a resolution derived from a finer base sheet: `levels`
/// spatial halvings and `time_ratio` base steps per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedSheet {
    pub base: SheetGrid,
    pub levels: u32,
    pub time_ratio: u64,
}

impl DerivedSheet {
    pub fn identity(base: SheetGrid) -> Self {
        Self {
            base,
            levels: 0,
            time_ratio: 1,
        }
    }

    pub fn sites(&self) -> usize {
        self.base.n >> self.levels
    }

    pub fn dt(&self) -> f64 {
        self.base.dt * self.time_ratio as f64
    }

    pub fn eps(&self) -> f64 {
        self.base.eps * f64::from(1u32 << self.levels)
    }

    /// Writes the increments of derived step `step` into `out`, using `work`
    /// as scratch.
    pub fn fill(&self, step: u64, out: &mut [f64], work: &mut Vec<f64>) {
        let n = self.sites();
        assert_eq!(out.len(), n);
        if self.levels == 0 && self.time_ratio == 1 {
            self.base.fill(step, out);
            return;
        }
        work.resize(2 * self.base.n, 0.0);
        out.fill(0.0);
        for sub in 0..self.time_ratio {
            let (fine, rest) = work.split_at_mut(self.base.n);
            self.base.fill(step * self.time_ratio + sub, fine);
            let mut len = self.base.n;
            let mut src_is_fine = true;
            for _ in 0..self.levels {
                let (src, dst) = if src_is_fine {
                    (&fine[..len], &mut rest[..len / 2])
                } else {
                    (&rest[..len], &mut fine[..len / 2])
                };
                coarsen_into(src, dst).expect("sheet sizes are powers of two");
                len /= 2;
                src_is_fine = !src_is_fine;
            }
            let level = if src_is_fine { &fine[..n] } else { &rest[..n] };
            for (o, v) in out.iter_mut().zip(level) {
                *o += v;
            }
        }
    }
}

/// A fine and a coarse resolution driven by one sheet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledStreams {
    pub fine: SheetGrid,
    pub coarse: SheetGrid,
    pub ratio: u64,
}

impl CoupledStreams {
    pub fn new(fine: SheetGrid, coarse: SheetGrid) -> Result<Self> {
        if fine.seed != coarse.seed || fine.replica != coarse.replica {
            return Err(invalid("coupled grids must share seed and replica"));
        }
        if fine.n != 2 * coarse.n {
            return Err(invalid(format!(
                "fine grid must have twice the coarse sites ({} vs {})",
                fine.n, coarse.n
            )));
        }
        if ((coarse.eps - 2.0 * fine.eps) / coarse.eps).abs() > 1e-12 {
            return Err(invalid("coarse cell width must be twice the fine width"));
        }
        let r = coarse.dt / fine.dt;
        let ratio = r.round();
        if ratio < 1.0 || (r - ratio).abs() > 1e-9 * r {
            return Err(invalid(format!("dt ratio {r} is not a positive integer")));
        }
        Ok(Self {
            fine,
            coarse,
            ratio: ratio as u64,
        })
    }

    pub fn fine_sheet(&self) -> DerivedSheet {
        DerivedSheet::identity(self.fine)
    }

    pub fn coarse_sheet(&self) -> DerivedSheet {
        DerivedSheet {
            base: self.fine,
            levels: 1,
            time_ratio: self.ratio,
        }
    }

    pub fn fine_step(&self, step: u64) -> NoiseIncrement {
        sample_increments(&self.fine, step)
    }

    /// `Σ_{r} coarsen(fine step k·ratio + r)`.
    pub fn coarse_step(&self, step: u64) -> NoiseIncrement {
        let sheet = self.coarse_sheet();
        let mut values = vec![0.0; sheet.sites()];
        sheet.fill(step, &mut values, &mut Vec::new());
        NoiseIncrement { values }
    }
}
