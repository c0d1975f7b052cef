//! Position environments and their allocation rules in quantile space.
//!
//! An agent's quantile `q` is the probability that a random rival has a lower
//! value. The highest-`k`-bids-win rule among `n` agents serves quantile `q`
//! with probability `x_k(q) = P[Bin(n-1, 1-q) <= k-1]`, and every rank-by-bid
//! position auction is a mixture of these rules weighted by its marginal
//! weights.
//!
//! All binomial sums are evaluated in log space so rules with `n` in the
//! thousands do not underflow far from the mode.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{arg_err, Error, Result};

/// Tolerance used when validating weight vectors.
const WEIGHT_TOL: f64 = 1e-12;

/// Largest row of Pascal's triangle evaluated with exact integer arithmetic.
const EXACT_BINOMIAL_MAX: usize = 50;

/// Position weights `1 >= w[1] >= ... >= w[n] >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PositionWeights {
    w: Vec<f64>,
}

impl PositionWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return arg_err(format!("position weights need n >= 2 entries, got {}", w.len()));
        }
        for (i, &wi) in w.iter().enumerate() {
            if !wi.is_finite() || !(-WEIGHT_TOL..=1.0 + WEIGHT_TOL).contains(&wi) {
                return arg_err(format!("weight w[{}] = {} outside [0, 1]", i + 1, wi));
            }
        }
        for pair in w.windows(2) {
            if pair[1] > pair[0] + WEIGHT_TOL {
                return arg_err(format!("weights must be nonincreasing, got {} then {}", pair[0], pair[1]));
            }
        }
        let w = w.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { w })
    }

    /// `k` slots served with certainty, the rest never.
    pub fn k_unit(k: usize, n: usize) -> Result<Self> {
        if k > n {
            return arg_err(format!("k-unit environment needs k <= n, got k = {k}, n = {n}"));
        }
        Self::new((1..=n).map(|i| if i <= k { 1.0 } else { 0.0 }).collect())
    }

    pub fn one_unit(n: usize) -> Result<Self> {
        Self::k_unit(1, n)
    }

    /// `w[k] = (n - k) / (n - 1)`, whose allocation rule is `x(q) = q`.
    pub fn uniform_stair(n: usize) -> Result<Self> {
        if n < 2 {
            return arg_err("uniform-stair needs n >= 2");
        }
        let denom = (n - 1) as f64;
        Self::new((1..=n).map(|k| (n - k) as f64 / denom).collect())
    }

    pub fn never_serve(n: usize) -> Result<Self> {
        Self::k_unit(0, n)
    }

    /// Rebuild weights from marginals by cumulative sums from the bottom slot.
    pub fn from_marginals(m: &MarginalWeights) -> Result<Self> {
        let n = m.n();
        let mut w = vec![0.0; n];
        let mut acc = 0.0;
        for k in (1..=n).rev() {
            acc += m.wbar[k];
            w[k - 1] = acc;
        }
        Self::new(w)
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    /// `w[1..=n]` stored zero-based.
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// One-based accessor; `w[0] = 1` and `w[n + 1] = 0` by convention.
    pub fn w(&self, k: usize) -> f64 {
        match k {
            0 => 1.0,
            k if k <= self.w.len() => self.w[k - 1],
            _ => 0.0,
        }
    }
}

impl TryFrom<Vec<f64>> for PositionWeights {
    type Error = Error;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<PositionWeights> for Vec<f64> {
    fn from(p: PositionWeights) -> Self {
        p.w
    }
}

/// Increments of the position weights, a distribution over unit counts `0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalWeights {
    wbar: Vec<f64>,
}

impl MarginalWeights {
    pub fn n(&self) -> usize {
        self.wbar.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.wbar
    }

    pub fn get(&self, k: usize) -> f64 {
        self.wbar.get(k).copied().unwrap_or(0.0)
    }
}

/// `wbar[k] = w[k] - w[k+1]` with `wbar[0] = 1 - w[1]` and `wbar[n] = w[n]`.
pub fn marginal_weights(w: &PositionWeights) -> MarginalWeights {
    let n = w.n();
    let wbar = (0..=n).map(|k| (w.w(k) - w.w(k + 1)).max(0.0)).collect();
    MarginalWeights { wbar }
}

/// Treatment weights putting marginal mass 1/2 on the one-unit and 1/2 on the
/// `(n-1)`-unit auction: `w = (1, 1/2, ..., 1/2, 0)`.
pub fn universal_b(n: usize) -> Result<PositionWeights> {
    if n < 3 {
        return arg_err(format!("universal B test needs n >= 3, got {n}"));
    }
    let w = (1..=n)
        .map(|k| match k {
            1 => 1.0,
            k if k == n => 0.0,
            _ => 0.5,
        })
        .collect();
    PositionWeights::new(w)
}

/// Natural log of `C(m, j)`; exact integer arithmetic for small rows.
fn ln_choose(m: usize, j: usize) -> f64 {
    if j > m {
        return f64::NEG_INFINITY;
    }
    if m <= EXACT_BINOMIAL_MAX {
        let j = j.min(m - j);
        let mut c: u128 = 1;
        for i in 0..j {
            c = c * (m - i) as u128 / (i + 1) as u128;
        }
        (c as f64).ln()
    } else {
        ln_binomial(m as u64, j as u64)
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `t * ln(x)` with the convention `0 * ln(0) = 0`, i.e. `0^0 = 1`.
fn xlogy(t: usize, ln_x: f64) -> f64 {
    if t == 0 {
        0.0
    } else {
        t as f64 * ln_x
    }
}

/// A nonnegative combination `sum_j c_j C(m, j) q^(m-j) (1-q)^j` of binomial
/// probabilities, stored as `(j, ln(c_j C(m, j)))` for the nonzero terms.
#[derive(Clone, Debug)]
struct BinomialSum {
    m: usize,
    terms: Vec<(usize, f64)>,
}

impl BinomialSum {
    fn new(m: usize, coeffs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let terms = coeffs.into_iter().filter(|&(_, c)| c > 0.0).map(|(j, c)| (j, c.ln() + ln_choose(m, j))).collect();
        Self { m, terms }
    }

    fn ln_eval(&self, q: f64) -> f64 {
        let ln_q = q.ln();
        let ln_p = (1.0 - q).ln();
        let m = self.m;
        log_sum_exp(self.terms.iter().map(move |&(j, lc)| lc + xlogy(m - j, ln_q) + xlogy(j, ln_p)))
    }

    fn eval(&self, q: f64) -> f64 {
        self.ln_eval(q).exp()
    }
}

/// Precomputed polynomial pieces of a rank-by-bid rule.
#[derive(Clone, Debug)]
struct BinomialKernel {
    alloc: BinomialSum,
    deriv: BinomialSum,
    /// `q -> int_0^q (1 - t) x'(t) dt`.
    revenue_weight: BinomialSum,
}

impl BinomialKernel {
    fn from_marginals(m: &MarginalWeights) -> Self {
        let n = m.n();
        // x(q) = sum_i C(n-1, i) q^(n-1-i) (1-q)^i w[i+1]
        let alloc = BinomialSum::new(n - 1, (0..n).map(|i| (i, (m.wbar[i + 1..].iter().sum::<f64>()).min(1.0))));
        // x'(q) = (n-1) sum_k wbar[k] C(n-2, k-1) q^(n-1-k) (1-q)^(k-1)
        let deriv = BinomialSum::new(n - 2, (0..n - 1).map(|j| (j, (n - 1) as f64 * m.wbar[j + 1])));
        // int_0^q (1-t) x_k'(t) dt = (k/n) P[Bin(n, 1-q) <= k]
        let mut suffix = vec![0.0; n + 1];
        let mut acc = 0.0;
        for k in (1..n).rev() {
            acc += m.wbar[k] * k as f64 / n as f64;
            suffix[k] = acc;
        }
        suffix[0] = acc;
        let revenue_weight = BinomialSum::new(n, suffix.into_iter().enumerate());
        Self { alloc, deriv, revenue_weight }
    }
}

/// Structural description of an allocation rule; serializable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    MultiUnit { k: usize, n: usize },
    Position { weights: PositionWeights },
    Mixture { components: Vec<(f64, RuleKind)> },
}

impl RuleKind {
    /// Compact description, e.g. `k-unit:2`, `1,0.5,0` or `mix(0.9*k-unit:1+0.1*1,0.5,0)`.
    pub fn label(&self) -> String {
        match self {
            RuleKind::MultiUnit { k, .. } => format!("k-unit:{k}"),
            RuleKind::Position { weights } => {
                weights.weights().iter().map(|w| format!("{w}")).collect::<Vec<_>>().join(",")
            }
            RuleKind::Mixture { components } => {
                let parts: Vec<String> = components.iter().map(|(w, k)| format!("{w}*{}", k.label())).collect();
                format!("mix({})", parts.join("+"))
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Repr {
    Binomial(BinomialKernel),
    Mixture(Vec<(f64, AllocationRule)>),
}

/// Allocation rule `x(q)` of an `n`-agent rank-by-bid auction.
///
/// Immutable after construction; evaluators are pure.
#[derive(Clone, Debug)]
pub struct AllocationRule {
    n: usize,
    kind: RuleKind,
    repr: Repr,
}

impl AllocationRule {
    pub fn multi_unit(k: usize, n: usize) -> Result<Self> {
        check_k_n(k, n)?;
        let w = PositionWeights::k_unit(k, n)?;
        let kernel = BinomialKernel::from_marginals(&marginal_weights(&w));
        Ok(Self { n, kind: RuleKind::MultiUnit { k, n }, repr: Repr::Binomial(kernel) })
    }

    pub fn position(w: PositionWeights) -> Self {
        let kernel = BinomialKernel::from_marginals(&marginal_weights(&w));
        Self { n: w.n(), kind: RuleKind::Position { weights: w }, repr: Repr::Binomial(kernel) }
    }

    /// Convex combination `sum_c weight_c * rule_c`; weights must sum to one.
    pub fn mixture(components: Vec<(f64, AllocationRule)>) -> Result<Self> {
        let Some(first) = components.first() else {
            return arg_err("mixture needs at least one component");
        };
        let n = first.1.n;
        let mut total = 0.0;
        for (w, r) in &components {
            if r.n != n {
                return arg_err(format!("mixture components disagree on n: {} vs {}", n, r.n));
            }
            if !w.is_finite() || *w < 0.0 {
                return arg_err(format!("mixture weight {w} is negative"));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return arg_err(format!("mixture weights sum to {total}, expected 1"));
        }
        let kind = RuleKind::Mixture { components: components.iter().map(|(w, r)| (*w, r.kind.clone())).collect() };
        Ok(Self { n, kind, repr: Repr::Mixture(components) })
    }

    pub fn from_kind(kind: &RuleKind) -> Result<Self> {
        match kind {
            RuleKind::MultiUnit { k, n } => Self::multi_unit(*k, *n),
            RuleKind::Position { weights } => Ok(Self::position(weights.clone())),
            RuleKind::Mixture { components } => {
                Self::mixture(components.iter().map(|(w, k)| Ok((*w, Self::from_kind(k)?))).collect::<Result<_>>()?)
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &RuleKind {
        &self.kind
    }

    /// Probability of service at quantile `q`.
    pub fn x(&self, q: f64) -> f64 {
        match &self.repr {
            Repr::Binomial(k) => k.alloc.eval(q).min(1.0),
            Repr::Mixture(cs) => cs.iter().map(|(w, r)| w * r.x(q)).sum(),
        }
    }

    pub fn xprime(&self, q: f64) -> f64 {
        match &self.repr {
            Repr::Binomial(k) => k.deriv.eval(q),
            Repr::Mixture(cs) => cs.iter().map(|(w, r)| w * r.xprime(q)).sum(),
        }
    }

    /// `ln x(q)`, finite wherever `x(q) > 0` even when `x(q)` underflows.
    pub fn ln_x(&self, q: f64) -> f64 {
        match &self.repr {
            Repr::Binomial(k) => k.alloc.ln_eval(q).min(0.0),
            Repr::Mixture(cs) => mixture_ln(cs, |r| r.ln_x(q)),
        }
    }

    pub fn ln_xprime(&self, q: f64) -> f64 {
        match &self.repr {
            Repr::Binomial(k) => k.deriv.ln_eval(q),
            Repr::Mixture(cs) => mixture_ln(cs, |r| r.ln_xprime(q)),
        }
    }

    /// `int_0^q (1 - t) x'(t) dt`, evaluated in closed form.
    pub fn revenue_weight(&self, q: f64) -> f64 {
        match &self.repr {
            Repr::Binomial(k) => k.revenue_weight.eval(q),
            Repr::Mixture(cs) => cs.iter().map(|(w, r)| w * r.revenue_weight(q)).sum(),
        }
    }

    /// Quantiles where some multi-unit component attains its maximum slope.
    fn slope_maximizers(&self, out: &mut Vec<f64>) {
        match (&self.kind, &self.repr) {
            (RuleKind::MultiUnit { k, n }, _) if *k >= 1 && *k < *n => {
                out.push((n - k) as f64 / (n - 1) as f64);
            }
            (RuleKind::Position { weights }, _) => {
                let n = weights.n();
                let m = marginal_weights(weights);
                out.extend((1..n).filter(|&k| m.get(k) > 0.0).map(|k| (n - k) as f64 / (n - 1) as f64));
            }
            (_, Repr::Mixture(cs)) => cs.iter().for_each(|(_, r)| r.slope_maximizers(out)),
            _ => {}
        }
    }
}

fn mixture_ln(cs: &[(f64, AllocationRule)], f: impl Fn(&AllocationRule) -> f64) -> f64 {
    let vals: Vec<f64> = cs.iter().filter(|(w, _)| *w > 0.0).map(|(w, r)| w.ln() + f(r)).collect();
    log_sum_exp(vals.iter().copied())
}

fn check_k_n(k: usize, n: usize) -> Result<()> {
    if n < 2 {
        return arg_err(format!("need n >= 2 agents, got {n}"));
    }
    if k > n {
        return arg_err(format!("unit count k = {k} exceeds n = {n}"));
    }
    Ok(())
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return arg_err(format!("quantile {q} outside [0, 1]"));
    }
    Ok(())
}

/// `x_k(q) = sum_{i<k} C(n-1, i) q^(n-1-i) (1-q)^i`.
pub fn multi_unit_alloc(k: usize, n: usize, q: f64) -> Result<f64> {
    if k == 0 {
        return arg_err("unit count k must be at least 1");
    }
    check_k_n(k, n)?;
    check_q(q)?;
    let ln_q = q.ln();
    let ln_p = (1.0 - q).ln();
    let sum: f64 = (0..k).map(|i| (ln_choose(n - 1, i) + xlogy(n - 1 - i, ln_q) + xlogy(i, ln_p)).exp()).sum();
    Ok(sum.min(1.0))
}

/// `x_k'(q) = (n-1) C(n-2, k-1) q^(n-1-k) (1-q)^(k-1)`, zero for `k = n`.
pub fn multi_unit_alloc_deriv(k: usize, n: usize, q: f64) -> Result<f64> {
    if k == 0 {
        return arg_err("unit count k must be at least 1");
    }
    check_k_n(k, n)?;
    check_q(q)?;
    if k == n {
        return Ok(0.0);
    }
    let ln = ((n - 1) as f64).ln() + ln_choose(n - 2, k - 1) + xlogy(n - 1 - k, q.ln()) + xlogy(k - 1, (1.0 - q).ln());
    Ok(ln.exp())
}

/// `x(q) = sum_k wbar[k] x_k(q)`.
pub fn position_alloc(w: &PositionWeights, q: f64) -> Result<f64> {
    check_q(q)?;
    Ok(AllocationRule::position(w.clone()).x(q))
}

pub fn position_alloc_deriv(w: &PositionWeights, q: f64) -> Result<f64> {
    check_q(q)?;
    Ok(AllocationRule::position(w.clone()).xprime(q))
}

/// `(1 - eps) a + eps b`.
pub fn mixture(a: &AllocationRule, b: &AllocationRule, eps: f64) -> Result<AllocationRule> {
    if !(0.0..=1.0).contains(&eps) {
        return arg_err(format!("mixture weight {eps} outside [0, 1]"));
    }
    if a.n() != b.n() {
        return arg_err(format!("mixture of rules with different n: {} vs {}", a.n(), b.n()));
    }
    AllocationRule::mixture(vec![(1.0 - eps, a.clone()), (eps, b.clone())])
}

/// Supremum of `x'` over a uniform grid of `grid_size` points plus the
/// analytic maximizers of any multi-unit components.
pub fn max_slope(rule: &AllocationRule, grid_size: usize) -> Result<f64> {
    if grid_size < 2 {
        return arg_err("max_slope needs grid_size >= 2");
    }
    let mut pts = Vec::new();
    rule.slope_maximizers(&mut pts);
    let step = 1.0 / (grid_size - 1) as f64;
    let grid_max = (0..grid_size).map(|i| rule.xprime(i as f64 * step)).fold(0.0, f64::max);
    Ok(pts.into_iter().map(|q| rule.xprime(q)).fold(grid_max, f64::max))
}

/// Named or literal rule presets used by config files and the CLI.
#[derive(Clone, Debug, PartialEq)]
pub enum RulePreset {
    OneUnit,
    KUnit(usize),
    /// `(n-1)`-unit auction.
    AllButOne,
    UniformStair,
    UniversalB,
    NeverServe,
    Weights(Vec<f64>),
}

impl RulePreset {
    pub fn weights(&self, n: usize) -> Result<PositionWeights> {
        match self {
            RulePreset::OneUnit => PositionWeights::one_unit(n),
            RulePreset::KUnit(k) => PositionWeights::k_unit(*k, n),
            RulePreset::AllButOne => PositionWeights::k_unit(n.saturating_sub(1), n),
            RulePreset::UniformStair => PositionWeights::uniform_stair(n),
            RulePreset::UniversalB => universal_b(n),
            RulePreset::NeverServe => PositionWeights::never_serve(n),
            RulePreset::Weights(w) => {
                if w.len() != n {
                    return arg_err(format!("weight list has {} entries but n = {}", w.len(), n));
                }
                PositionWeights::new(w.clone())
            }
        }
    }

    pub fn build(&self, n: usize) -> Result<AllocationRule> {
        match self {
            RulePreset::OneUnit => AllocationRule::multi_unit(1, n),
            RulePreset::KUnit(k) => AllocationRule::multi_unit(*k, n),
            RulePreset::AllButOne => AllocationRule::multi_unit(n.saturating_sub(1), n),
            _ => Ok(AllocationRule::position(self.weights(n)?)),
        }
    }
}

impl FromStr for RulePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "one-unit" => return Ok(RulePreset::OneUnit),
            "all-but-one" | "n-1-unit" => return Ok(RulePreset::AllButOne),
            "uniform-stair" => return Ok(RulePreset::UniformStair),
            "universal-b" => return Ok(RulePreset::UniversalB),
            "never-serve" => return Ok(RulePreset::NeverServe),
            _ => {}
        }
        if let Some(k) = s.strip_prefix("k-unit:") {
            let k = k.trim().parse().map_err(|_| Error::Parse(format!("bad unit count in '{s}'")))?;
            return Ok(RulePreset::KUnit(k));
        }
        let w = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parse(format!("unrecognized rule '{s}'")))?;
        Ok(RulePreset::Weights(w))
    }
}

impl fmt::Display for RulePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RulePreset::OneUnit => write!(f, "one-unit"),
            RulePreset::KUnit(k) => write!(f, "k-unit:{k}"),
            RulePreset::AllButOne => write!(f, "all-but-one"),
            RulePreset::UniformStair => write!(f, "uniform-stair"),
            RulePreset::UniversalB => write!(f, "universal-b"),
            RulePreset::NeverServe => write!(f, "never-serve"),
            RulePreset::Weights(w) => {
                let parts: Vec<String> = w.iter().map(|v| v.to_string()).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn multi_unit_values() {
        assert!(close(multi_unit_alloc(1, 3, 0.5).unwrap(), 0.25, 1e-15));
        assert!(close(multi_unit_alloc(5, 5, 0.3).unwrap(), 1.0, 1e-15));
        // at most one of two rivals above q = 0.5: q^2 + 2q(1-q)
        assert!(close(multi_unit_alloc(2, 3, 0.5).unwrap(), 0.75, 1e-15));
        assert_eq!(multi_unit_alloc(1, 4, 0.0).unwrap(), 0.0);
        assert_eq!(multi_unit_alloc(3, 4, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn multi_unit_rejects_bad_args() {
        assert!(multi_unit_alloc(0, 3, 0.5).is_err());
        assert!(multi_unit_alloc(4, 3, 0.5).is_err());
        assert!(multi_unit_alloc(1, 3, 1.5).is_err());
        assert!(multi_unit_alloc_deriv(1, 3, -0.1).is_err());
    }

    #[test]
    fn multi_unit_derivative_values() {
        assert!(close(multi_unit_alloc_deriv(1, 2, 0.7).unwrap(), 1.0, 1e-15));
        assert!(close(multi_unit_alloc_deriv(1, 4, 0.5).unwrap(), 0.75, 1e-15));
        assert!(close(multi_unit_alloc_deriv(2, 3, 0.5).unwrap(), 1.0, 1e-15));
        assert_eq!(multi_unit_alloc_deriv(3, 3, 0.5).unwrap(), 0.0);
        // 0^0 = 1 at the endpoints
        assert!(close(multi_unit_alloc_deriv(1, 2, 0.0).unwrap(), 1.0, 1e-15));
        assert!(close(multi_unit_alloc_deriv(2, 3, 1.0).unwrap(), 0.0, 1e-15));
        assert!(close(multi_unit_alloc_deriv(2, 3, 0.0).unwrap(), 2.0, 1e-15));
    }

    #[test]
    fn marginal_weight_examples() {
        let m = marginal_weights(&PositionWeights::new(vec![1.0, 0.5]).unwrap());
        assert_eq!(m.as_slice(), &[0.0, 0.5, 0.5]);
        let m = marginal_weights(&PositionWeights::k_unit(3, 5).unwrap());
        assert_eq!(m.as_slice(), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let m = marginal_weights(&PositionWeights::new(vec![1.0, 0.5, 0.0]).unwrap());
        assert_eq!(m.as_slice(), &[0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn weights_validation() {
        assert!(PositionWeights::new(vec![0.5, 0.7]).is_err());
        assert!(PositionWeights::new(vec![1.2, 0.7]).is_err());
        assert!(PositionWeights::new(vec![1.0]).is_err());
        assert!(PositionWeights::new(vec![1.0, -0.1]).is_err());
    }

    #[test]
    fn position_alloc_examples() {
        let stair = PositionWeights::uniform_stair(8).unwrap();
        assert!(close(position_alloc(&stair, 0.37).unwrap(), 0.37, 1e-13));
        assert!(close(position_alloc_deriv(&stair, 0.37).unwrap(), 1.0, 1e-12));
        let w = PositionWeights::k_unit(2, 5).unwrap();
        assert!(close(position_alloc(&w, 0.41).unwrap(), multi_unit_alloc(2, 5, 0.41).unwrap(), 1e-14));
        let w = PositionWeights::new(vec![1.0, 0.5]).unwrap();
        assert!(close(position_alloc(&w, 0.5).unwrap(), 0.75, 1e-15));
    }

    #[test]
    fn mixture_examples() {
        let a = AllocationRule::multi_unit(1, 2).unwrap();
        let b = AllocationRule::position(PositionWeights::uniform_stair(2).unwrap());
        let c = mixture(&a, &b, 0.5).unwrap();
        assert!(close(c.x(0.5), 0.5, 1e-15));
        let c0 = mixture(&a, &b, 0.0).unwrap();
        let c1 = mixture(&a, &b, 1.0).unwrap();
        for i in 0..=100 {
            let q = i as f64 / 100.0;
            assert_eq!(c0.x(q), a.x(q));
            assert_eq!(c0.xprime(q), a.xprime(q));
            assert_eq!(c1.x(q), b.x(q));
            assert_eq!(c1.xprime(q), b.xprime(q));
        }
        let other = AllocationRule::multi_unit(1, 3).unwrap();
        assert!(mixture(&a, &other, 0.5).is_err());
        assert!(mixture(&a, &b, 1.5).is_err());
    }

    #[test]
    fn universal_b_examples() {
        assert_eq!(universal_b(4).unwrap().weights(), &[1.0, 0.5, 0.5, 0.0]);
        assert_eq!(marginal_weights(&universal_b(4).unwrap()).as_slice(), &[0.0, 0.5, 0.0, 0.5, 0.0]);
        assert_eq!(universal_b(3).unwrap().weights(), &[1.0, 0.5, 0.0]);
        assert!(universal_b(2).is_err());
    }

    #[test]
    fn max_slope_examples() {
        let r = AllocationRule::multi_unit(1, 6).unwrap();
        assert!(close(max_slope(&r, 101).unwrap(), 5.0, 1e-12));
        let n = 32;
        let r = AllocationRule::multi_unit(n / 2, n).unwrap();
        let s = max_slope(&r, 1001).unwrap();
        let m = ((n / 2 - 1).min(n / 2)) as f64;
        let lo = (n - 1) as f64 / (2.0 * std::f64::consts::PI * m).sqrt();
        let hi = (n - 1) as f64 / (std::f64::consts::PI * m).sqrt();
        assert!(lo <= s && s <= hi, "{lo} <= {s} <= {hi}");
        assert!(max_slope(&r, 1).is_err());
    }

    #[test]
    fn revenue_weight_matches_quadrature() {
        for (k, n) in [(1, 2), (1, 5), (3, 5), (4, 5), (7, 64)] {
            let r = AllocationRule::multi_unit(k, n).unwrap();
            let steps = 200_000;
            let h = 1.0 / steps as f64;
            let mut acc = 0.0;
            let mut prev = r.xprime(0.0);
            for i in 1..=steps {
                let q = i as f64 * h;
                let cur = (1.0 - q) * r.xprime(q);
                let last = (1.0 - (q - h)) * prev;
                acc += 0.5 * h * (cur + last);
                prev = r.xprime(q);
                if i % 40_000 == 0 {
                    assert!(close(r.revenue_weight(q), acc, 1e-8), "k={k} n={n} q={q}");
                }
            }
            assert!(close(r.revenue_weight(1.0), k as f64 / n as f64, 1e-12));
        }
    }

    #[test]
    fn log_space_agrees_with_direct() {
        let r = AllocationRule::multi_unit(1, 1024).unwrap();
        // q^1023 underflows for q = 0.3 but its log does not
        assert_eq!(r.x(0.3), 0.0);
        assert!(close(r.ln_x(0.3), 1023.0 * 0.3f64.ln(), 1e-9));
        let r = AllocationRule::position(PositionWeights::uniform_stair(300).unwrap());
        for q in [0.01, 0.2, 0.77, 0.999] {
            assert!(close(r.x(q), q, 1e-12));
            assert!(close(r.ln_xprime(q), 0.0, 1e-10));
        }
    }

    #[test]
    fn preset_parsing() {
        assert_eq!("one-unit".parse::<RulePreset>().unwrap(), RulePreset::OneUnit);
        assert_eq!("k-unit:3".parse::<RulePreset>().unwrap(), RulePreset::KUnit(3));
        assert_eq!("universal-b".parse::<RulePreset>().unwrap(), RulePreset::UniversalB);
        assert_eq!("1, 0.5, 0".parse::<RulePreset>().unwrap(), RulePreset::Weights(vec![1.0, 0.5, 0.0]));
        assert!("banana".parse::<RulePreset>().is_err());
        assert!(RulePreset::Weights(vec![1.0, 0.5]).build(3).is_err());
        let r = RulePreset::UniformStair.build(8).unwrap();
        assert!(close(r.x(0.25), 0.25, 1e-13));
    }

    #[test]
    fn rule_kind_round_trips_through_json() {
        let a = AllocationRule::multi_unit(1, 4).unwrap();
        let b = AllocationRule::position(universal_b(4).unwrap());
        let c = mixture(&a, &b, 0.25).unwrap();
        let json = serde_json::to_string(c.kind()).unwrap();
        let back = AllocationRule::from_kind(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.kind(), c.kind());
        assert_eq!(back.x(0.3), c.x(0.3));
    }
}
