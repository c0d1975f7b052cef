//! Monte Carlo experiments: mean absolute deviation of the revenue estimator
//! for the three designs, the mixture-weight sweep, and CSV output.
//!
//! Trial `t` draws its sample with seed `seed ^ t`; results are gathered in
//! trial order, so the worker count never changes the output.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::alloc::{mixture, AllocationRule, PositionWeights, RulePreset};
use crate::bounds::{bound_general_y, BoundConstants, BoundInputs, Design};
use crate::dist::{true_revenue, QuantileGrid, ValueDistribution, DEFAULT_GRID};
use crate::equil::{bid_curve, PaymentFormat};
use crate::error::{arg_err, Error, Result};
use crate::estim::LinearEstimator;

pub const MAD_TABLE_VERSION: &str = "# posinfer mad-table v1";
pub const SWEEP_VERSION: &str = "# posinfer eps-sweep v1";

pub const DEFAULT_EPS: f64 = 0.001;
pub const DEFAULT_TRIALS: usize = 1000;

/// Agent counts and sample sizes of the full table.
pub const TABLE_AGENTS: [usize; 9] = [4, 8, 16, 32, 64, 128, 256, 512, 1024];
pub const TABLE_SAMPLES: [usize; 6] = [2, 10, 100, 1_000, 10_000, 100_000];

/// Incumbent and treatment rules of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub enum DesignChoice {
    Standard(Design),
    Custom { a: RulePreset, b: RulePreset },
}

impl DesignChoice {
    /// `(A, B)` for `n` agents.
    pub fn rules(&self, n: usize) -> Result<(AllocationRule, AllocationRule)> {
        let one = || AllocationRule::multi_unit(1, n);
        let stair = || PositionWeights::uniform_stair(n).map(AllocationRule::position);
        match self {
            DesignChoice::Standard(Design::One) => Ok((one()?, stair()?)),
            DesignChoice::Standard(Design::Two) => Ok((stair()?, one()?)),
            DesignChoice::Standard(Design::Three) => Ok((AllocationRule::multi_unit(n - 1, n)?, one()?)),
            DesignChoice::Custom { a, b } => Ok((a.build(n)?, b.build(n)?)),
        }
    }

    pub fn standard(&self) -> Option<Design> {
        match self {
            DesignChoice::Standard(d) => Some(*d),
            DesignChoice::Custom { .. } => None,
        }
    }
}

impl fmt::Display for DesignChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignChoice::Standard(d) => write!(f, "{}", d.number()),
            DesignChoice::Custom { a, b } => write!(f, "custom({a};{b})"),
        }
    }
}

impl FromStr for DesignChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(d) = s.parse::<u8>().ok().and_then(Design::from_number) {
            return Ok(DesignChoice::Standard(d));
        }
        if let Some(rest) = s.strip_prefix("custom:") {
            if let Some((a, b)) = rest.split_once(';') {
                return Ok(DesignChoice::Custom { a: a.parse()?, b: b.parse()? });
            }
        }
        Err(Error::Parse(format!("unknown design '{s}'; expected 1, 2, 3 or custom:A;B")))
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub design: DesignChoice,
    pub n: usize,
    pub samples: usize,
    pub eps: f64,
    pub trials: usize,
    pub grid: QuantileGrid,
    pub dist: ValueDistribution,
    pub format: PaymentFormat,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(design: DesignChoice, n: usize, samples: usize, seed: u64) -> Self {
        Self {
            design,
            n,
            samples,
            eps: DEFAULT_EPS,
            trials: DEFAULT_TRIALS,
            grid: QuantileGrid::new(DEFAULT_GRID).expect("default grid"),
            dist: ValueDistribution::Beta22,
            format: PaymentFormat::AllPay,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return arg_err("trials must be at least 1");
        }
        if self.samples == 0 {
            return arg_err("sample size N must be at least 1");
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return arg_err(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        Ok(())
    }
}

/// Scalings of the per-agent MAD that a MAD table may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Normalization {
    /// Total-revenue MAD times `sqrt(N) / n`, i.e. per-agent MAD times `sqrt(N)`.
    RootNOverAgents,
    /// Total-revenue MAD times `sqrt(N / n)`.
    RootOfNOverAgents,
}

impl Normalization {
    /// Factor applied to a per-agent quantity.
    pub fn factor(&self, n: usize, samples: usize) -> f64 {
        let (n, s) = (n as f64, samples as f64);
        match self {
            Normalization::RootNOverAgents => s.sqrt(),
            Normalization::RootOfNOverAgents => (s * n).sqrt(),
        }
    }
}

/// The scaling that reproduces the reference MAD tables.
pub const TABLE_NORMALIZATION: Normalization = Normalization::RootNOverAgents;

#[derive(Clone, Debug, Serialize)]
pub struct MadResult {
    /// Mean of `|P_hat - P|` for per-agent revenue.
    pub raw_mad: f64,
    pub norm_root_n_over_agents: f64,
    pub norm_root_of_n_over_agents: f64,
    pub normalization: Normalization,
    pub normalized_mad: f64,
    /// Standard error of the MAD relative to the MAD.
    pub mc_rel_error: f64,
    /// Per-agent revenue of B by quadrature.
    pub truth: f64,
    /// General-target bound on per-agent error, default constants.
    pub bound: f64,
}

/// Signed per-agent errors `P_hat - P` for every trial, plus the truth.
pub struct TrialErrors {
    pub errors: Vec<f64>,
    pub truth: f64,
    pub test_rule: AllocationRule,
    pub target: AllocationRule,
}

pub fn trial_errors(spec: &ExperimentSpec) -> Result<TrialErrors> {
    spec.validate()?;
    let (a, b) = spec.design.rules(spec.n)?;
    let c = mixture(&a, &b, spec.eps)?;
    let curve = bid_curve(spec.format, &spec.dist, &c, &spec.grid)?;
    let est = LinearEstimator::revenue(spec.format, &c, &b, spec.samples)?;
    let truth = true_revenue(&spec.dist, &b, &spec.grid);
    let errors: Vec<f64> = (0..spec.trials)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(hist, bids), t| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ t as u64);
                curve.sample_sorted_into(spec.samples, &mut rng, hist, bids);
                Ok(est.apply(bids)? - truth)
            },
        )
        .collect::<Result<_>>()?;
    Ok(TrialErrors { errors, truth, test_rule: c, target: b })
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn run_design(spec: &ExperimentSpec) -> Result<MadResult> {
    let t = trial_errors(spec)?;
    let abs: Vec<f64> = t.errors.iter().map(|e| e.abs()).collect();
    let (raw_mad, se) = mean_and_se(&abs);
    let inputs = BoundInputs::from_rules(&t.test_rule, &t.target, spec.samples, spec.eps);
    let bound = bound_general_y(&inputs, &BoundConstants::default());
    let f1 = Normalization::RootNOverAgents.factor(spec.n, spec.samples);
    let f2 = Normalization::RootOfNOverAgents.factor(spec.n, spec.samples);
    Ok(MadResult {
        raw_mad,
        norm_root_n_over_agents: raw_mad * f1,
        norm_root_of_n_over_agents: raw_mad * f2,
        normalization: TABLE_NORMALIZATION,
        normalized_mad: raw_mad * TABLE_NORMALIZATION.factor(spec.n, spec.samples),
        mc_rel_error: se / raw_mad,
        truth: t.truth,
        bound,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MadRow {
    pub design: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    pub eps: f64,
    pub trials: usize,
    pub seed: u64,
    pub raw_mad: f64,
    #[serde(rename = "norm_sqrtN_over_n")]
    pub norm_root_n_over_agents: f64,
    #[serde(rename = "norm_sqrt_N_over_n_alt")]
    pub norm_root_of_n_over_agents: f64,
    /// Same units as `raw_mad`.
    pub bound: f64,
}

impl MadRow {
    pub fn new(spec: &ExperimentSpec, r: &MadResult) -> Self {
        Self {
            design: spec.design.to_string(),
            n: spec.n,
            samples: spec.samples,
            eps: spec.eps,
            trials: spec.trials,
            seed: spec.seed,
            raw_mad: r.raw_mad,
            norm_root_n_over_agents: r.norm_root_n_over_agents,
            norm_root_of_n_over_agents: r.norm_root_of_n_over_agents,
            bound: r.bound,
        }
    }
}

/// Every `(n, N)` cell for one design; rows ordered by `n`, then `N`.
pub fn mad_table(base: &ExperimentSpec, agents: &[usize], samples: &[usize]) -> Result<Vec<MadRow>> {
    let mut rows = Vec::with_capacity(agents.len() * samples.len());
    for &n in agents {
        for &s in samples {
            let spec = ExperimentSpec { n, samples: s, ..base.clone() };
            rows.push(MadRow::new(&spec, &run_design(&spec)?));
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub design: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    pub eps: f64,
    pub trials: usize,
    pub seed: u64,
    pub median_rel_error: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Median of `|P_hat - P| / P` over trials for each mixture weight.
pub fn epsilon_sweep(base: &ExperimentSpec, eps_list: &[f64]) -> Result<Vec<SweepRow>> {
    if eps_list.is_empty() {
        return arg_err("the eps list is empty");
    }
    eps_list
        .iter()
        .map(|&eps| {
            if !(eps > 0.0 && eps < 1.0) {
                return arg_err(format!("sweep eps must lie in (0, 1), got {eps}"));
            }
            let spec = ExperimentSpec { eps, ..base.clone() };
            let t = trial_errors(&spec)?;
            let rel = t.errors.iter().map(|e| e.abs() / t.truth).collect();
            Ok(SweepRow {
                design: spec.design.to_string(),
                n: spec.n,
                samples: spec.samples,
                eps,
                trials: spec.trials,
                seed: spec.seed,
                median_rel_error: median(rel),
            })
        })
        .collect()
}

/// Writes `version` as a comment line followed by a CSV table.
pub fn write_csv<W: Write, T: Serialize>(mut out: W, version: &str, rows: &[T]) -> Result<()> {
    writeln!(out, "{version}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Flat `key = value` pairs; blank lines and `#` comments are skipped.
pub fn read_config(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse(format!("line {}: expected key=value", i + 1)));
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Config pairs as `--key=value` flags.
pub fn config_args(pairs: &[(String, String)]) -> Vec<String> {
    pairs.iter().map(|(k, v)| format!("--{k}={v}")).collect()
}
