//! Counterfactual estimators: revenue of a target rule `y` from sorted bids
//! observed under a source rule `x`, plus expected value and welfare.
//!
//! Every estimator is linear in the sorted bids, `sum_i c_i b_(i)`, so the
//! weights are computed once by [`LinearEstimator`] and reused across samples.
//! Weight evaluations at `q = 0` and `q = 1` clamp the ratio `y'/x'` to
//! `[1/(2N), 1 - 1/(2N)]`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::alloc::RuleKind;
use crate::alloc::{AllocationRule, PositionWeights};
use crate::bounds::{
    bound_allpay_k, bound_expected_value, bound_general_y, clamp_quantile, BoundConstants, BoundInputs,
};
use crate::equil::{BidSample, PaymentFormat};
use crate::error::{arg_err, Error, Result};

/// `Z_y(q) = (1 - q) y'(q) / x'(q)` and `Zbar(q) = 1 / x'(q)` for a sample of
/// size `samples`.
#[derive(Clone, Copy, Debug)]
pub struct ZFunction<'a> {
    x: &'a AllocationRule,
    y: &'a AllocationRule,
    samples: usize,
}

impl<'a> ZFunction<'a> {
    pub fn new(x: &'a AllocationRule, y: &'a AllocationRule, samples: usize) -> Result<Self> {
        if x.n() != y.n() {
            return arg_err(format!("source has n = {} but target has n = {}", x.n(), y.n()));
        }
        if samples == 0 {
            return arg_err("sample size must be positive");
        }
        Ok(Self { x, y, samples })
    }

    fn ln_xprime(&self, q: f64) -> Result<f64> {
        let lx = self.x.ln_xprime(q);
        if lx == f64::NEG_INFINITY {
            return Err(Error::DegenerateSource { quantile: q });
        }
        Ok(lx)
    }

    /// `ln(y'/x')` at the clamped quantile.
    pub fn ln_ratio(&self, q: f64) -> Result<f64> {
        let q = clamp_quantile(q, self.samples);
        let lx = self.ln_xprime(q)?;
        Ok(self.y.ln_xprime(q) - lx)
    }

    pub fn z(&self, q: f64) -> Result<f64> {
        Ok((1.0 - q) * self.ln_ratio(q)?.exp())
    }

    pub fn zbar(&self, q: f64) -> Result<f64> {
        Ok((-self.ln_xprime(clamp_quantile(q, self.samples))?).exp())
    }

    /// `x(q) Z_y(q)`, computed in log space.
    fn xz(&self, q: f64) -> Result<f64> {
        let lr = self.ln_ratio(q)?;
        Ok((self.x.ln_x(q) + (1.0 - q).ln() + lr).exp())
    }

    /// `x(q) Zbar(q)`.
    fn xzbar(&self, q: f64) -> Result<f64> {
        let lx = self.ln_xprime(clamp_quantile(q, self.samples))?;
        Ok((self.x.ln_x(q) - lx).exp())
    }
}

/// Evaluates `f(i / N)` for `i = 0..=N`, failing on the first error.
fn on_breakpoints(samples: usize, f: impl Fn(f64) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    (0..samples + 1).into_par_iter().map(|i| f(i as f64 / samples as f64)).collect()
}

/// Weights `c_1..c_N` of an estimator `sum_i c_i b_(i)` over ascending bids.
#[derive(Clone, Debug)]
pub struct LinearEstimator {
    weights: Vec<f64>,
}

impl LinearEstimator {
    /// Revenue of `y` from bids under `x`.
    pub fn revenue(format: PaymentFormat, x: &AllocationRule, y: &AllocationRule, samples: usize) -> Result<Self> {
        let zf = ZFunction::new(x, y, samples)?;
        let weights = match format {
            PaymentFormat::AllPay => {
                let z = on_breakpoints(samples, |q| zf.z(q))?;
                z.windows(2).map(|w| w[0] - w[1]).collect()
            }
            PaymentFormat::FirstPrice => {
                // -x Z' = -(x Z)' + (1 - q) y'; the second term integrates in closed form
                let xz = on_breakpoints(samples, |q| zf.xz(q))?;
                let iy = on_breakpoints(samples, |q| Ok(y.revenue_weight(q)))?;
                (1..=samples).map(|i| xz[i - 1] - xz[i] + iy[i] - iy[i - 1]).collect()
            }
        };
        Ok(Self { weights })
    }

    /// Expected value `E[v]`. The first-price form is experimental.
    pub fn expected_value(format: PaymentFormat, x: &AllocationRule, samples: usize) -> Result<Self> {
        let zf = ZFunction::new(x, x, samples)?;
        let mut weights: Vec<f64> = match format {
            PaymentFormat::AllPay => {
                let zb = on_breakpoints(samples, |q| zf.zbar(q))?;
                let mut c: Vec<f64> = zb.windows(2).map(|w| w[0] - w[1]).collect();
                c[samples - 1] += zb[samples];
                c
            }
            PaymentFormat::FirstPrice => {
                let wb = on_breakpoints(samples, |q| zf.xzbar(q))?;
                let mut c: Vec<f64> = wb.windows(2).map(|w| 1.0 / samples as f64 + w[0] - w[1]).collect();
                c[samples - 1] += wb[samples];
                c
            }
        };
        weights.shrink_to_fit();
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn samples(&self) -> usize {
        self.weights.len()
    }

    /// `sum_i c_i b_i`; `sorted_bids` must be ascending with `N` entries.
    pub fn apply(&self, sorted_bids: &[f64]) -> Result<f64> {
        if sorted_bids.len() != self.weights.len() {
            return arg_err(format!("estimator built for {} bids, got {}", self.weights.len(), sorted_bids.len()));
        }
        Ok(self.weights.iter().zip(sorted_bids).map(|(c, b)| c * b).sum())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateMeta {
    pub samples: usize,
    pub n: usize,
    pub format: PaymentFormat,
    pub source: String,
    pub target: String,
    pub seed: Option<u64>,
    /// Set for estimators without an established error analysis.
    pub experimental: bool,
    pub constants: BoundConstants,
}

/// Point estimate with the applicable error bound.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub point: f64,
    pub bound: Option<f64>,
    pub meta: EstimateMeta,
}

/// One CSV row describing an estimate.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateRow {
    pub design: String,
    pub format: PaymentFormat,
    pub n: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub estimate: f64,
    pub truth: Option<f64>,
    pub abs_error: Option<f64>,
    pub bound: Option<f64>,
}

impl EstimateReport {
    pub fn to_row(&self, design: &str, eps: Option<f64>, truth: Option<f64>) -> EstimateRow {
        EstimateRow {
            design: design.to_string(),
            format: self.meta.format,
            n: self.meta.n,
            samples: self.meta.samples,
            eps,
            seed: self.meta.seed,
            estimate: self.point,
            truth,
            abs_error: truth.map(|t| (self.point - t).abs()),
            bound: self.bound,
        }
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn check_format(sample: &BidSample, want: PaymentFormat) -> Result<()> {
    if sample.format() != want {
        return Err(Error::FormatMismatch { expected: want.to_string(), found: sample.format().to_string() });
    }
    Ok(())
}

fn meta(sample: &BidSample, x: &AllocationRule, target: String, experimental: bool) -> EstimateMeta {
    EstimateMeta {
        samples: sample.len(),
        n: x.n(),
        format: sample.format(),
        source: x.kind().label(),
        target,
        seed: None,
        experimental,
        constants: BoundConstants::default(),
    }
}

fn revenue_bound(x: &AllocationRule, y: &AllocationRule, samples: usize) -> f64 {
    let inputs = BoundInputs::from_rules(x, y, samples, 0.0);
    let c = BoundConstants::default();
    match y.kind() {
        RuleKind::MultiUnit { .. } => bound_allpay_k(&inputs, &c),
        _ => bound_general_y(&inputs, &c),
    }
}

fn revenue_report(sample: &BidSample, x: &AllocationRule, y: &AllocationRule) -> Result<EstimateReport> {
    let est = LinearEstimator::revenue(sample.format(), x, y, sample.len())?;
    Ok(EstimateReport {
        point: est.apply(sample.bids())?,
        bound: Some(revenue_bound(x, y, sample.len())),
        meta: meta(sample, x, y.kind().label(), false),
    })
}

/// Per-agent revenue of `y` from an all-pay sample under `x`.
pub fn estimate_revenue_allpay(sample: &BidSample, x: &AllocationRule, y: &AllocationRule) -> Result<EstimateReport> {
    check_format(sample, PaymentFormat::AllPay)?;
    revenue_report(sample, x, y)
}

/// Per-agent revenue of `y` from a first-price sample under `x`.
pub fn estimate_revenue_firstprice(
    sample: &BidSample,
    x: &AllocationRule,
    y: &AllocationRule,
) -> Result<EstimateReport> {
    check_format(sample, PaymentFormat::FirstPrice)?;
    revenue_report(sample, x, y)
}

/// Dispatches on the sample's payment format.
pub fn estimate_revenue(sample: &BidSample, x: &AllocationRule, y: &AllocationRule) -> Result<EstimateReport> {
    revenue_report(sample, x, y)
}

/// `P_1, ..., P_{n-1}`: revenues of every multi-unit auction.
pub fn estimate_multiunit_revenues(sample: &BidSample, x: &AllocationRule) -> Result<Vec<f64>> {
    let n = x.n();
    (1..n)
        .into_par_iter()
        .map(|k| {
            let y = AllocationRule::multi_unit(k, n)?;
            LinearEstimator::revenue(sample.format(), x, &y, sample.len())?.apply(sample.bids())
        })
        .collect()
}

/// `E[v]` from bids under `x`.
pub fn estimate_expected_value(sample: &BidSample, x: &AllocationRule) -> Result<EstimateReport> {
    let est = LinearEstimator::expected_value(sample.format(), x, sample.len())?;
    let inputs = BoundInputs::from_rules(x, x, sample.len(), 0.0);
    Ok(EstimateReport {
        point: est.apply(sample.bids())?,
        bound: Some(bound_expected_value(&inputs, &BoundConstants::default())),
        meta: meta(sample, x, "expected-value".into(), sample.format() == PaymentFormat::FirstPrice),
    })
}

/// Per-agent welfare `w_1 E[v] - sum_k (w_1 - w_{k+1}) P_k / k`.
///
/// The bound is the matching combination of the component bounds.
pub fn estimate_welfare(sample: &BidSample, x: &AllocationRule, w: &PositionWeights) -> Result<EstimateReport> {
    let n = x.n();
    if w.n() != n {
        return arg_err(format!("weights have n = {} but the source rule has n = {n}", w.n()));
    }
    let ev = estimate_expected_value(sample, x)?;
    let w1 = w.w(1);
    let terms: Vec<(f64, f64, f64)> = (1..n)
        .into_par_iter()
        .filter(|&k| w1 - w.w(k + 1) != 0.0)
        .map(|k| {
            let y = AllocationRule::multi_unit(k, n)?;
            let p = LinearEstimator::revenue(sample.format(), x, &y, sample.len())?.apply(sample.bids())?;
            let coef = (w1 - w.w(k + 1)) / k as f64;
            Ok((coef, p, coef * revenue_bound(x, &y, sample.len())))
        })
        .collect::<Result<_>>()?;
    let point = w1 * ev.point - terms.iter().map(|(c, p, _)| c * p).sum::<f64>();
    let bound = ev.bound.map(|b| w1 * b + terms.iter().map(|t| t.2).sum::<f64>());
    Ok(EstimateReport {
        point,
        bound,
        meta: meta(
            sample,
            x,
            format!("welfare:{}", RuleKind::Position { weights: w.clone() }.label()),
            ev.meta.experimental,
        ),
    })
}
