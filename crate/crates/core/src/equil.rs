//! Symmetric equilibrium bid curves, bid sampling and value inversion.
//!
//! Bids are tabulated on a [`QuantileGrid`]. The all-pay curve integrates
//! `b'(q) = v(q) x'(q)` and the first-price curve solves
//! `v = b + x b' / x'`, i.e. `b(q) = (1/x(q)) int_0^q v dx`. Both integrals are
//! taken against the measure `dx` cell by cell (trapezoid in `v`), which keeps
//! steep rules with large `n` accurate on a fixed grid.
//!
//! Sampling uses [`ChaCha8Rng`] seeded with `seed_from_u64`; replicate `r` of a
//! Monte Carlo study uses seed `seed ^ r`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::{AllocationRule, RuleKind};
use crate::dist::{QuantileGrid, ValueDistribution};
use crate::error::{arg_err, Error, Result};

/// Slopes below this are treated as zero by the inversions.
pub const SLOPE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaymentFormat {
    AllPay,
    FirstPrice,
}

impl fmt::Display for PaymentFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PaymentFormat::AllPay => write!(f, "allpay"),
            PaymentFormat::FirstPrice => write!(f, "firstprice"),
        }
    }
}

impl FromStr for PaymentFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "allpay" | "all-pay" => Ok(PaymentFormat::AllPay),
            "firstprice" | "first-price" | "fp" => Ok(PaymentFormat::FirstPrice),
            other => Err(Error::Parse(format!("unknown payment format '{other}'"))),
        }
    }
}

/// Equilibrium bid as a function of quantile, tabulated on a grid.
#[derive(Clone, Debug)]
pub struct BidCurve {
    format: PaymentFormat,
    rule: AllocationRule,
    grid: QuantileGrid,
    bids: Vec<f64>,
}

impl BidCurve {
    /// Wraps an externally tabulated curve; `bids` must have `grid.len()`
    /// nondecreasing entries.
    pub fn from_parts(format: PaymentFormat, rule: AllocationRule, grid: QuantileGrid, bids: Vec<f64>) -> Result<Self> {
        if bids.len() != grid.len() {
            return arg_err(format!("curve has {} bids for {} grid points", bids.len(), grid.len()));
        }
        if bids.windows(2).any(|w| w[1] < w[0]) {
            return arg_err("bid curve must be nondecreasing");
        }
        Ok(Self { format, rule, grid, bids })
    }

    pub fn format(&self) -> PaymentFormat {
        self.format
    }

    pub fn rule(&self) -> &AllocationRule {
        &self.rule
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    /// Mean of the piecewise-linear curve, the distribution sampled by
    /// [`sample_bids`].
    pub fn mean_bid(&self) -> f64 {
        self.bids.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() * self.grid.step()
    }

    /// Bid CDF `P[b(q) <= b]` of the interpolated curve, or `P[b(q) < b]`
    /// when `inclusive` is false.
    pub fn cdf(&self, b: f64, inclusive: bool) -> f64 {
        let bids = &self.bids;
        let j = if inclusive { bids.partition_point(|&x| x <= b) } else { bids.partition_point(|&x| x < b) };
        if j == 0 {
            return 0.0;
        }
        if j == bids.len() {
            return 1.0;
        }
        let (lo, hi) = (bids[j - 1], bids[j]);
        let frac = if hi > lo { ((b - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        ((j - 1) as f64 + frac) * self.grid.step()
    }

    /// Draws `count` quantiles uniformly on `[0, 1]` and writes the bids,
    /// linearly interpolated between grid points and sorted ascending, into
    /// `out`. Runs in `O(count + m)` by counting draws per grid cell.
    pub fn sample_sorted_into<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
        hist: &mut Vec<u32>,
        out: &mut Vec<f64>,
    ) {
        let m = self.grid.m();
        hist.clear();
        hist.resize(m, 0);
        for _ in 0..count {
            hist[rng.random_range(0..m)] += 1;
        }
        out.clear();
        out.reserve(count);
        let mut cell = Vec::new();
        for (j, &c) in hist.iter().enumerate() {
            if c == 0 {
                continue;
            }
            cell.clear();
            cell.extend((0..c).map(|_| rng.random::<f64>()));
            cell.sort_by(f64::total_cmp);
            let (lo, hi) = (self.bids[j], self.bids[j + 1]);
            out.extend(cell.iter().map(|u| lo + u * (hi - lo)));
        }
    }
}

fn value_table(dist: &ValueDistribution, grid: &QuantileGrid) -> Vec<f64> {
    grid.points().map(|q| dist.value(q)).collect()
}

/// `x(q_i) - x(q_{i-1})` for every cell, by three-point Gauss-Legendre on
/// `x'`. Differencing `x` directly loses all precision where `x` is near 1.
fn cell_masses(rule: &AllocationRule, grid: &QuantileGrid) -> Vec<f64> {
    const NODES: [(f64, f64); 3] =
        [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];
    let h = grid.step();
    (1..grid.len())
        .map(|i| {
            let mid = grid.q(i) - 0.5 * h;
            0.5 * h * NODES.iter().map(|(t, w)| w * rule.xprime(mid + 0.5 * h * t)).sum::<f64>()
        })
        .collect()
}

/// `b(q) = int_0^q v(t) x'(t) dt`.
pub fn allpay_bid_curve(dist: &ValueDistribution, rule: &AllocationRule, grid: &QuantileGrid) -> Result<BidCurve> {
    let v = value_table(dist, grid);
    let dx = cell_masses(rule, grid);
    let mut bids = Vec::with_capacity(grid.len());
    bids.push(0.0);
    for i in 1..grid.len() {
        let inc = 0.5 * (v[i - 1] + v[i]) * dx[i - 1];
        bids.push(bids[i - 1] + inc);
    }
    BidCurve::from_parts(PaymentFormat::AllPay, rule.clone(), *grid, bids)
}

/// `b(q) = (1/x(q)) int_0^q v(t) x'(t) dt`, evaluated as the recursion
/// `b_i = r b_{i-1} + (1 - r) vbar_i` with `r = x(q_{i-1}) / x(q_i)`. The
/// ratio comes from log space when small and from `1 - dx / x(q_i)` when near
/// 1. At `q = 0` with `x(0) = 0` the curve takes its limit `v(0)`.
pub fn firstprice_bid_curve(dist: &ValueDistribution, rule: &AllocationRule, grid: &QuantileGrid) -> Result<BidCurve> {
    let v = value_table(dist, grid);
    let ln_x: Vec<f64> = grid.points().map(|q| rule.ln_x(q)).collect();
    let dx = cell_masses(rule, grid);
    let mut bids = Vec::with_capacity(grid.len());
    bids.push(if ln_x[0] == f64::NEG_INFINITY { v[0] } else { 0.0 });
    for i in 1..grid.len() {
        if ln_x[i] == f64::NEG_INFINITY {
            return Err(Error::DegenerateRule(format!(
                "allocation rule vanishes on [0, {}]; first-price bids are undefined",
                grid.q(i)
            )));
        }
        let r = (ln_x[i - 1] - ln_x[i]).exp().min(1.0);
        let gain = if r < 0.5 { 1.0 - r } else { (dx[i - 1] * (-ln_x[i]).exp()).min(1.0) };
        let vbar = 0.5 * (v[i - 1] + v[i]);
        let b = bids[i - 1] + gain * (vbar - bids[i - 1]);
        // rounding can push a flat stretch down by an ulp
        bids.push(b.max(bids[i - 1]));
    }
    BidCurve::from_parts(PaymentFormat::FirstPrice, rule.clone(), *grid, bids)
}

pub fn bid_curve(
    format: PaymentFormat,
    dist: &ValueDistribution,
    rule: &AllocationRule,
    grid: &QuantileGrid,
) -> Result<BidCurve> {
    match format {
        PaymentFormat::AllPay => allpay_bid_curve(dist, rule, grid),
        PaymentFormat::FirstPrice => firstprice_bid_curve(dist, rule, grid),
    }
}

/// Values recovered from a bid curve; `None` where `x'` is below
/// [`SLOPE_EPS`].
#[derive(Clone, Debug)]
pub struct ValueCurve {
    pub grid: QuantileGrid,
    pub values: Vec<Option<f64>>,
}

impl ValueCurve {
    pub fn gaps(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Largest `|v_hat(q) - v(q)|` over defined grid points in `[lo, hi]`.
    pub fn sup_error(&self, dist: &ValueDistribution, lo: f64, hi: f64) -> f64 {
        self.grid
            .points()
            .zip(&self.values)
            .filter(|(q, _)| *q >= lo && *q <= hi)
            .filter_map(|(q, v)| v.map(|v| (v - dist.value(q)).abs()))
            .fold(0.0, f64::max)
    }
}

/// Central differences inside, second-order one-sided stencils at the ends.
fn derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    if n < 3 {
        return vec![(values[n - 1] - values[0]) / h; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h)
            } else {
                (values[i + 1] - values[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

fn check_format(curve: &BidCurve, want: PaymentFormat) -> Result<()> {
    if curve.format != want {
        return Err(Error::FormatMismatch { expected: want.to_string(), found: curve.format.to_string() });
    }
    Ok(())
}

/// `v(q) = b'(q) / x'(q)`.
pub fn invert_allpay(curve: &BidCurve, rule: &AllocationRule) -> Result<ValueCurve> {
    check_format(curve, PaymentFormat::AllPay)?;
    let db = derivative(&curve.bids, curve.grid.step());
    let values = curve
        .grid
        .points()
        .zip(db)
        .map(|(q, d)| {
            let xp = rule.xprime(q);
            (xp >= SLOPE_EPS).then(|| d / xp)
        })
        .collect();
    Ok(ValueCurve { grid: curve.grid, values })
}

/// `v(q) = b(q) + x(q) b'(q) / x'(q)`.
pub fn invert_firstprice(curve: &BidCurve, rule: &AllocationRule) -> Result<ValueCurve> {
    check_format(curve, PaymentFormat::FirstPrice)?;
    let db = derivative(&curve.bids, curve.grid.step());
    let values = curve
        .grid
        .points()
        .zip(db)
        .zip(&curve.bids)
        .map(|((q, d), &b)| {
            let xp = rule.xprime(q);
            (xp >= SLOPE_EPS).then(|| b + rule.x(q) * d / xp)
        })
        .collect();
    Ok(ValueCurve { grid: curve.grid, values })
}

pub fn invert(curve: &BidCurve, rule: &AllocationRule) -> Result<ValueCurve> {
    match curve.format {
        PaymentFormat::AllPay => invert_allpay(curve, rule),
        PaymentFormat::FirstPrice => invert_firstprice(curve, rule),
    }
}

/// Sorted i.i.d. bids from one auction, with the rule that generated them.
#[derive(Clone, Debug)]
pub struct BidSample {
    format: PaymentFormat,
    rule: AllocationRule,
    bids: Vec<f64>,
}

impl BidSample {
    /// Sorts `bids`; rejects empty, negative or non-finite input.
    pub fn new(format: PaymentFormat, rule: AllocationRule, mut bids: Vec<f64>) -> Result<Self> {
        if bids.is_empty() {
            return arg_err("bid sample is empty");
        }
        if let Some(b) = bids.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return arg_err(format!("bid {b} is negative or not finite"));
        }
        bids.sort_by(f64::total_cmp);
        Ok(Self { format, rule, bids })
    }

    pub fn format(&self) -> PaymentFormat {
        self.format
    }

    pub fn rule(&self) -> &AllocationRule {
        &self.rule
    }

    /// Agents in the generating auction.
    pub fn n(&self) -> usize {
        self.rule.n()
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.bids.iter().sum::<f64>() / self.bids.len() as f64
    }

    /// Writes the one-column CSV (header `bid`) and a `<path>.json` sidecar
    /// holding format, `n` and the generating rule.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bid"])?;
        for b in &self.bids {
            w.write_record([format!("{b:e}")])?;
        }
        w.flush()?;
        let meta = SampleMeta { format: self.format, n: self.n(), rule: self.rule.kind().clone() };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Reads bids from a one-column CSV. The generating rule comes from the
    /// sidecar when present, otherwise from `fallback`.
    pub fn read_csv(path: impl AsRef<Path>, fallback: Option<(PaymentFormat, AllocationRule)>) -> Result<Self> {
        let path = path.as_ref();
        let bids = read_bid_column(path)?;
        let side = sidecar_path(path);
        let (format, rule) = match fallback {
            Some(f) => f,
            None if side.exists() => {
                let meta: SampleMeta = serde_json::from_str(&std::fs::read_to_string(&side)?)?;
                let rule = AllocationRule::from_kind(&meta.rule)?;
                if rule.n() != meta.n {
                    return Err(Error::Parse(format!("sidecar n = {} disagrees with rule n = {}", meta.n, rule.n())));
                }
                (meta.format, rule)
            }
            None => return arg_err(format!("no sidecar at {} and no generating rule given", side.display())),
        };
        Self::new(format, rule, bids)
    }
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    format: PaymentFormat,
    n: usize,
    rule: RuleKind,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_bid_column(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "bid")
        .ok_or_else(|| Error::Parse(format!("{} has no 'bid' column", path.display())))?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            rec.get(col)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("row {} of {} is not a number", i + 2, path.display())))
        })
        .collect()
}

/// `count` i.i.d. bids from `curve`, sorted ascending.
pub fn sample_bids(curve: &BidCurve, count: usize, seed: u64) -> Result<BidSample> {
    if count == 0 {
        return arg_err("sample size must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist = Vec::new();
    let mut bids = Vec::new();
    curve.sample_sorted_into(count, &mut rng, &mut hist, &mut bids);
    Ok(BidSample { format: curve.format, rule: curve.rule.clone(), bids })
}

/// Step function `b_hat(q) = b_(i)` on `[(i-1)/N, i/N)`; the largest bid at 1.
pub fn empirical_bid_function(sample: &BidSample, q: f64) -> Result<f64> {
    if sample.bids.is_empty() {
        return arg_err("empirical bid function of an empty sample");
    }
    if !(0.0..=1.0).contains(&q) {
        return arg_err(format!("quantile {q} outside [0, 1]"));
    }
    let n = sample.bids.len();
    let i = ((q * n as f64).floor() as usize).min(n - 1);
    Ok(sample.bids[i])
}

/// `sup_b |G_hat(b) - G(b)|` between the sample's empirical CDF and the bid
/// CDF of the grid curve it was drawn from.
pub fn ks_distance(sample: &BidSample, curve: &BidCurve) -> f64 {
    let n = sample.bids.len() as f64;
    sample
        .bids
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let above = i as f64 + 1.0;
            (above / n - curve.cdf(b, true)).max(curve.cdf(b, false) - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// `sup_q sqrt(N) |b(q) - b_hat(q)| / b'(q)` over interior grid points with
/// `b' > 0`. Reported as a diagnostic only.
pub fn weighted_bid_error(sample: &BidSample, curve: &BidCurve) -> f64 {
    let db = derivative(curve.bids(), curve.grid.step());
    let sqrt_n = (sample.len() as f64).sqrt();
    let m = curve.grid.m();
    (1..m)
        .filter(|&i| db[i] > 0.0)
        .map(|i| {
            let q = curve.grid.q(i);
            let bh = empirical_bid_function(sample, q).unwrap_or(0.0);
            sqrt_n * (curve.bids[i] - bh).abs() / db[i]
        })
        .fold(0.0, f64::max)
}
