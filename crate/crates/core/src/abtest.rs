//! A/B tests run inside a single mixed mechanism: the incumbent `A` keeps
//! weight `1 - eps` and candidates `B_1..B_r` share `eps` equally.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::alloc::AllocationRule;
use crate::dist::{true_revenue, QuantileGrid, ValueDistribution};
use crate::equil::{bid_curve, BidCurve, BidSample, PaymentFormat};
use crate::error::{arg_err, Result};
use crate::estim::LinearEstimator;

#[derive(Clone, Debug)]
pub struct ABDesign {
    pub a: AllocationRule,
    pub bs: Vec<AllocationRule>,
    /// Total weight on the candidates.
    pub eps: f64,
    pub dist: ValueDistribution,
    pub format: PaymentFormat,
}

impl ABDesign {
    pub fn n(&self) -> usize {
        self.a.n()
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return arg_err(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        if self.bs.is_empty() {
            return arg_err("an A/B design needs at least one candidate");
        }
        if let Some(b) = self.bs.iter().find(|b| b.n() != self.a.n()) {
            return arg_err(format!("candidate has n = {} but the incumbent has n = {}", b.n(), self.a.n()));
        }
        Ok(())
    }
}

/// `C = (1 - eps) A + sum_i (eps / r) B_i`.
pub fn build_test_mechanism(design: &ABDesign) -> Result<AllocationRule> {
    design.validate()?;
    let share = design.eps / design.bs.len() as f64;
    let mut components = Vec::with_capacity(design.bs.len() + 1);
    if design.eps < 1.0 {
        components.push((1.0 - design.eps, design.a.clone()));
    }
    components.extend(design.bs.iter().map(|b| (share, b.clone())));
    AllocationRule::mixture(components)
}

/// Outcome of `1{P_hat(B1) - alpha P_hat(B2) > 0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Comparison {
    /// 1 when `B1` is declared better; a zero margin classifies as 0.
    pub verdict: u8,
    pub margin: f64,
    pub first: f64,
    pub second: f64,
}

fn classify(first: f64, second: f64, alpha: f64) -> Comparison {
    let margin = first - alpha * second;
    Comparison { verdict: u8::from(margin > 0.0), margin, first, second }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return arg_err(format!("alpha must be positive, got {alpha}"));
    }
    Ok(())
}

pub fn compare_revenues(
    sample: &BidSample,
    x: &AllocationRule,
    b1: &AllocationRule,
    b2: &AllocationRule,
    alpha: f64,
) -> Result<Comparison> {
    check_alpha(alpha)?;
    let p1 = LinearEstimator::revenue(sample.format(), x, b1, sample.len())?.apply(sample.bids())?;
    let p2 = LinearEstimator::revenue(sample.format(), x, b2, sample.len())?.apply(sample.bids())?;
    Ok(classify(p1, p2, alpha))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestOf {
    pub index: usize,
    pub estimates: Vec<f64>,
}

/// First index attaining the maximum; `NaN` never wins.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Candidate with the largest estimated revenue, all estimated from the same
/// sample; ties go to the lowest index.
pub fn best_of_r(sample: &BidSample, x: &AllocationRule, candidates: &[AllocationRule]) -> Result<BestOf> {
    if candidates.len() < 2 {
        return arg_err("best_of_r needs at least two candidates");
    }
    let estimates = candidates
        .iter()
        .map(|y| LinearEstimator::revenue(sample.format(), x, y, sample.len())?.apply(sample.bids()))
        .collect::<Result<Vec<_>>>()?;
    Ok(BestOf { index: argmax(&estimates), estimates })
}

/// Monte Carlo error rate of a decision rule over `trials` samples.
#[derive(Clone, Debug, Serialize)]
pub struct DecisionStudy {
    /// Candidate revenues by quadrature.
    pub truth: Vec<f64>,
    pub correct: usize,
    pub trials: usize,
    pub samples: usize,
    /// Fraction of trials with the wrong decision.
    pub error_rate: f64,
    /// Margin `P(B1) - alpha P(B2)` for pairwise studies, else the gap between
    /// the two best candidates.
    pub gap: f64,
}

struct Prepared {
    curve: BidCurve,
    estimators: Vec<LinearEstimator>,
    truth: Vec<f64>,
}

fn prepare(design: &ABDesign, samples: usize, grid: &QuantileGrid) -> Result<Prepared> {
    let c = build_test_mechanism(design)?;
    let curve = bid_curve(design.format, &design.dist, &c, grid)?;
    let estimators = design
        .bs
        .iter()
        .map(|b| LinearEstimator::revenue(design.format, &c, b, samples))
        .collect::<Result<Vec<_>>>()?;
    let truth = design.bs.iter().map(|b| true_revenue(&design.dist, b, grid)).collect();
    Ok(Prepared { curve, estimators, truth })
}

/// Runs `decide` on the candidate estimates of each trial; trial `t` samples
/// with seed `seed ^ t`.
fn run_trials(
    p: &Prepared,
    samples: usize,
    trials: usize,
    seed: u64,
    decide: impl Fn(&[f64]) -> bool + Sync,
) -> Result<usize> {
    let hits: Vec<bool> = (0..trials)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(hist, bids), t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t as u64);
                p.curve.sample_sorted_into(samples, &mut rng, hist, bids);
                let est = p.estimators.iter().map(|e| e.apply(bids)).collect::<Result<Vec<_>>>()?;
                Ok(decide(&est))
            },
        )
        .collect::<Result<_>>()?;
    Ok(hits.into_iter().filter(|h| *h).count())
}

/// Misclassification rate of the pairwise classifier; `design.bs` must hold
/// exactly two candidates.
pub fn misclassification_rate(
    design: &ABDesign,
    alpha: f64,
    samples: usize,
    trials: usize,
    seed: u64,
    grid: &QuantileGrid,
) -> Result<DecisionStudy> {
    check_alpha(alpha)?;
    if design.bs.len() != 2 {
        return arg_err("pairwise comparison needs exactly two candidates");
    }
    let p = prepare(design, samples, grid)?;
    let want = classify(p.truth[0], p.truth[1], alpha);
    let correct = run_trials(&p, samples, trials, seed, |e| classify(e[0], e[1], alpha).verdict == want.verdict)?;
    Ok(DecisionStudy {
        gap: want.margin,
        truth: p.truth,
        correct,
        trials,
        samples,
        error_rate: (trials - correct) as f64 / trials as f64,
    })
}

/// How often [`best_of_r`] picks the candidate with the largest true revenue.
pub fn best_of_r_study(
    design: &ABDesign,
    samples: usize,
    trials: usize,
    seed: u64,
    grid: &QuantileGrid,
) -> Result<DecisionStudy> {
    if design.bs.len() < 2 {
        return arg_err("best_of_r needs at least two candidates");
    }
    let p = prepare(design, samples, grid)?;
    let want = argmax(&p.truth);
    let mut sorted = p.truth.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let correct = run_trials(&p, samples, trials, seed, |e| argmax(e) == want)?;
    Ok(DecisionStudy {
        gap: sorted[0] - sorted[1],
        truth: p.truth,
        correct,
        trials,
        samples,
        error_rate: (trials - correct) as f64 / trials as f64,
    })
}
