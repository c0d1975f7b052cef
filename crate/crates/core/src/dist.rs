//! Value distributions in quantile space and the quadrature / Monte Carlo
//! oracles for revenue and welfare.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;

use crate::alloc::AllocationRule;
use crate::error::{arg_err, Error, Result};

/// Default number of grid intervals.
pub const DEFAULT_GRID: usize = 10_000;

/// Uniform partition `q_i = i / m`, `i = 0..=m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantileGrid {
    m: usize,
}

impl QuantileGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 1 {
            return arg_err("quantile grid needs m >= 1 intervals");
        }
        Ok(Self { m })
    }

    /// Number of intervals; there are `m + 1` points.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn q(&self, i: usize) -> f64 {
        if i == self.m {
            1.0
        } else {
            i as f64 / self.m as f64
        }
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.m + 1).map(move |i| self.q(i))
    }

    /// Endpoint clamp used for derivatives that blow up at 0 or 1.
    pub fn clamp_delta(&self) -> f64 {
        1.0 / (10.0 * self.m as f64)
    }
}

impl Default for QuantileGrid {
    fn default() -> Self {
        Self { m: DEFAULT_GRID }
    }
}

/// Composite trapezoid rule over a uniform grid.
pub fn trapezoid(grid: &QuantileGrid, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let m = grid.m();
    // collect before summing so the result is independent of the thread count
    let vals: Vec<f64> = (1..m).into_par_iter().map(|i| f(grid.q(i))).collect();
    (vals.iter().sum::<f64>() + 0.5 * (f(0.0) + f(1.0))) * grid.step()
}

/// Monotone piecewise-linear quantile function from `(q, v)` knots.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedQuantile {
    q: Vec<f64>,
    v: Vec<f64>,
}

impl TabulatedQuantile {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return arg_err("tabulated quantile function needs at least two points");
        }
        let (q, v): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        if q[0] != 0.0 || *q.last().unwrap() != 1.0 {
            return arg_err("tabulated quantiles must start at 0 and end at 1");
        }
        if q.windows(2).any(|w| w[1] <= w[0]) {
            return arg_err("tabulated quantiles must be strictly increasing");
        }
        if v.windows(2).any(|w| w[1] < w[0]) {
            return arg_err("tabulated values must be nondecreasing");
        }
        if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return arg_err("tabulated values must lie in [0, 1]");
        }
        Ok(Self { q, v })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(vec![(0.0, c), (1.0, c)])
    }

    /// Two-column CSV of `q,v` rows; a header row is optional.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr =
            csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_path(path)?;
        let mut pts = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Parse(format!("row {} needs two columns (q, v)", line + 1)));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(q), Ok(v)) => pts.push((q, v)),
                _ if line == 0 => continue,
                _ => return Err(Error::Parse(format!("row {} is not numeric", line + 1))),
            }
        }
        Self::new(pts)
    }

    fn segment(&self, q: f64) -> usize {
        let idx = self.q.partition_point(|&x| x <= q);
        idx.clamp(1, self.q.len() - 1) - 1
    }

    fn value(&self, q: f64) -> f64 {
        let i = self.segment(q);
        let t = (q - self.q[i]) / (self.q[i + 1] - self.q[i]);
        self.v[i] + t * (self.v[i + 1] - self.v[i])
    }

    fn slope(&self, q: f64) -> f64 {
        let i = self.segment(q);
        (self.v[i + 1] - self.v[i]) / (self.q[i + 1] - self.q[i])
    }
}

/// Value distribution on `[0, 1]`, described by its quantile function `v(q)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueDistribution {
    Uniform01,
    /// Beta(2, 2), CDF `3v^2 - 2v^3`.
    Beta22,
    Tabulated(TabulatedQuantile),
}

impl ValueDistribution {
    /// `"uniform"`, `"beta22"`, or a path to a two-column `(q, v)` CSV.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" | "uniform01" => Ok(Self::Uniform01),
            "beta22" | "beta" => Ok(Self::Beta22),
            other if Path::new(other).exists() => Ok(Self::Tabulated(TabulatedQuantile::from_csv(other)?)),
            other => Err(Error::Parse(format!("unknown distribution '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform01 => "uniform",
            Self::Beta22 => "beta22",
            Self::Tabulated(_) => "tabulated",
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match self {
            Self::Uniform01 => v,
            Self::Beta22 => v * v * (3.0 - 2.0 * v),
            Self::Tabulated(t) => {
                // generalized inverse of the piecewise-linear quantile function
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if t.value(mid) <= v {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        }
    }

    /// `v(q) = F^{-1}(q)`.
    pub fn value(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        match self {
            Self::Uniform01 => q,
            Self::Beta22 => beta22_quantile(q),
            Self::Tabulated(t) => t.value(q),
        }
    }

    /// `v'(q)`, with `q` clamped to `[delta, 1 - delta]` where the Beta(2, 2)
    /// density vanishes.
    pub fn value_deriv(&self, q: f64, delta: f64) -> f64 {
        match self {
            Self::Uniform01 => 1.0,
            Self::Beta22 => {
                let v = beta22_quantile(q.clamp(delta, 1.0 - delta));
                1.0 / (6.0 * v * (1.0 - v))
            }
            Self::Tabulated(t) => t.slope(q.clamp(0.0, 1.0)),
        }
    }

    /// Revenue curve `R(q) = v(q) (1 - q)`, with `R(0) = R(1) = 0`.
    pub fn revenue(&self, q: f64) -> f64 {
        if q <= 0.0 || q >= 1.0 {
            return 0.0;
        }
        self.value(q) * (1.0 - q)
    }

    pub fn revenue_deriv(&self, q: f64, delta: f64) -> f64 {
        self.value_deriv(q, delta) * (1.0 - q) - self.value(q)
    }

    /// One value draw; Beta(2, 2) goes through an independent gamma-ratio
    /// sampler rather than the quantile function.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, beta: &Beta<f64>) -> f64 {
        match self {
            Self::Uniform01 => rng.random::<f64>(),
            Self::Beta22 => beta.sample(rng),
            Self::Tabulated(t) => t.value(rng.random::<f64>()),
        }
    }
}

/// Solves `3v^2 - 2v^3 = q` by bisection to `1e-12`.
fn beta22_quantile(q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    if q >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if mid * mid * (3.0 - 2.0 * mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn quantile_value(dist: &ValueDistribution, q: f64) -> f64 {
    dist.value(q)
}

pub fn revenue_curve(dist: &ValueDistribution, q: f64) -> f64 {
    dist.revenue(q)
}

/// Per-agent BNE revenue `E[R(q) x'(q)] = int v dI` with
/// `I(q) = int_0^q (1 - t) x'(t) dt` in closed form; `v` is averaged over each
/// cell, so steep rules cost no accuracy.
pub fn true_revenue(dist: &ValueDistribution, rule: &AllocationRule, grid: &QuantileGrid) -> f64 {
    let cells: Vec<f64> = (1..grid.len())
        .into_par_iter()
        .map(|i| {
            let (a, b) = (grid.q(i - 1), grid.q(i));
            0.5 * (dist.value(a) + dist.value(b)) * (rule.revenue_weight(b) - rule.revenue_weight(a))
        })
        .collect();
    cells.iter().sum()
}

/// `E[R(q) x'(q)]` by the plain trapezoid rule.
pub fn true_revenue_trapezoid(dist: &ValueDistribution, rule: &AllocationRule, grid: &QuantileGrid) -> f64 {
    trapezoid(grid, |q| dist.revenue(q) * rule.xprime(q))
}

/// The integrated-by-parts form `-E[R'(q) x(q)] = -int x dR`, with `x`
/// averaged over each cell against the exact increment of `R`; `R'` itself is
/// unbounded at the ends for Beta(2, 2).
pub fn true_revenue_by_parts(dist: &ValueDistribution, rule: &AllocationRule, grid: &QuantileGrid) -> f64 {
    let cells: Vec<f64> = (1..grid.len())
        .into_par_iter()
        .map(|i| {
            let (a, b) = (grid.q(i - 1), grid.q(i));
            0.5 * (rule.x(a) + rule.x(b)) * (dist.revenue(b) - dist.revenue(a))
        })
        .collect();
    -cells.iter().sum::<f64>()
}

/// `E[v(q)]`.
pub fn expected_value(dist: &ValueDistribution, grid: &QuantileGrid) -> f64 {
    trapezoid(grid, |q| dist.value(q))
}

/// Monte Carlo means of the order statistics, highest first.
#[derive(Clone, Debug)]
pub struct OrderStatistics {
    /// `means[k-1]` estimates the expected `k`-th highest of `n` values.
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub trials: usize,
}

const ORDER_STAT_CHUNK: usize = 4096;

/// Sorted-draw oracle for `E[v_(k)]`, `k = 1..=n`. Chunk `c` of trials uses
/// seed `seed ^ c`, so the result does not depend on the thread count.
pub fn order_statistic_means(dist: &ValueDistribution, n: usize, trials: usize, seed: u64) -> Result<OrderStatistics> {
    if n < 1 {
        return arg_err("order statistics need n >= 1");
    }
    if trials < 2 {
        return arg_err("order statistics need at least two trials");
    }
    let beta = Beta::new(2.0, 2.0).expect("valid beta parameters");
    let chunks = trials.div_ceil(ORDER_STAT_CHUNK);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ c as u64);
            let count = ORDER_STAT_CHUNK.min(trials - c * ORDER_STAT_CHUNK);
            let mut sum = vec![0.0; n];
            let mut sum_sq = vec![0.0; n];
            let mut draw = vec![0.0; n];
            for _ in 0..count {
                draw.iter_mut().for_each(|d| *d = dist.draw(&mut rng, &beta));
                draw.sort_by(|a, b| b.total_cmp(a));
                for k in 0..n {
                    sum[k] += draw[k];
                    sum_sq[k] += draw[k] * draw[k];
                }
            }
            (sum, sum_sq)
        })
        .collect();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for (s, s2) in &partial {
        for k in 0..n {
            sum[k] += s[k];
            sum_sq[k] += s2[k];
        }
    }
    let t = trials as f64;
    let means: Vec<f64> = sum.iter().map(|s| s / t).collect();
    let std_errors = (0..n)
        .map(|k| {
            let var = (sum_sq[k] / t - means[k] * means[k]).max(0.0) * t / (t - 1.0);
            (var / t).sqrt()
        })
        .collect();
    Ok(OrderStatistics { means, std_errors, trials })
}
