//! Quadrature and special-function helpers shared by the kernel and walk code.
//!
//! Everything here is deterministic and allocation-light: Gauss–Legendre rules
//! are computed once per order and cached by the caller.

use std::f64::consts::PI;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds an `n`-point rule by Newton iteration on the Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]` with a single application of the rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Composite rule over consecutive panel breakpoints.
    pub fn integrate_panels<F: FnMut(f64) -> f64>(&self, breaks: &[f64], mut f: F) -> f64 {
        breaks.windows(2).map(|w| self.integrate(w[0], w[1], &mut f)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Panel breakpoints on `[0, b]`: a geometric grading toward zero over the
/// first `b / panels` stretch, then uniform panels.
pub fn graded_breaks(b: f64, panels: usize, grading_levels: usize) -> Vec<f64> {
    let h = b / panels as f64;
    let mut out = Vec::with_capacity(panels + grading_levels + 1);
    out.push(0.0);
    for level in (1..=grading_levels).rev() {
        out.push(h * 0.5f64.powi(level as i32));
    }
    for i in 1..=panels {
        out.push(h * i as f64);
    }
    out
}

/// Riemann zeta function for real `s > 1`.
///
/// Direct summation of the first `terms` terms plus an Euler–Maclaurin tail
/// with Bernoulli corrections through `B_8`.
pub fn zeta(s: f64, terms: usize) -> f64 {
    assert!(s > 1.0, "zeta needs s > 1");
    assert!(terms >= 10);
    // summing small terms first keeps the rounding error near 1 ulp of the result
    let head: f64 = (1..terms).rev().map(|j| (j as f64).powf(-s)).sum();
    let n = terms as f64;
    let f = n.powf(-s);
    let mut tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * f;
    // B_{2k}/(2k)! * f^{(2k-1)}(n), f(x) = x^{-s}
    let bernoulli = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0];
    let mut factorial = 1.0;
    let mut rising = s; // s (s+1) ... (s+2k-2)
    for (k, b) in bernoulli.iter().enumerate() {
        let order = 2 * k + 1; // derivative order 2k-1 with k starting at 1
        factorial *= if k == 0 {
            2.0
        } else {
            ((2 * k + 1) * (2 * k + 2)) as f64
        };
        if k > 0 {
            rising *= (s + order as f64 - 2.0) * (s + order as f64 - 1.0);
        }
        tail += b / factorial * rising * n.powf(-s - order as f64);
    }
    head + tail
}

/// `∫_0^∞ (1 − cos x) / x^{β+1} dx` for `β ∈ (0, 2)`.
///
/// The unit interval is integrated term by term from the cosine series; the
/// rest is split into `1/β` minus an oscillatory cosine integral, integrated
/// period by period and closed with the asymptotic integration-by-parts tail.
pub fn one_minus_cos_moment(beta: f64) -> f64 {
    assert!(beta > 0.0 && beta < 2.0);
    // ∫_0^1 (1 − cos x) x^{-β-1} dx = Σ_{n≥1} (−1)^{n+1} / ((2n)! (2n − β))
    let mut head = 0.0;
    let mut fact = 1.0;
    for n in 1..30 {
        fact *= ((2 * n - 1) * (2 * n)) as f64;
        let term = 1.0 / (fact * (2 * n) as f64 - fact * beta);
        head += if n % 2 == 1 { term } else { -term };
        if term < 1e-20 {
            break;
        }
    }
    let p = beta + 1.0;
    let rule = GaussLegendre::new(24);
    let periods = 4000usize;
    let end = 2.0 * PI * periods as f64;
    let mut osc = rule.integrate(1.0, 2.0 * PI, |x| x.cos() * x.powf(-p));
    for k in 1..periods {
        let a = 2.0 * PI * k as f64;
        osc += rule.integrate(a, a + PI, |x| x.cos() * x.powf(-p));
        osc += rule.integrate(a + PI, a + 2.0 * PI, |x| x.cos() * x.powf(-p));
    }
    // ∫_X^∞ cos x x^{-p} dx at X = 2πK: p X^{-p-1} − p(p+1)(p+2) X^{-p-3} + …
    let tail = p * end.powf(-p - 1.0) - p * (p + 1.0) * (p + 2.0) * end.powf(-p - 3.0);
    osc += tail;
    head + 1.0 / beta - osc
}

/// Pairwise (cascade) summation in fixed order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Log-spaced nodes from `a` to `b` inclusive.
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > 0.0 && n >= 2);
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                (la + (lb - la) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}
