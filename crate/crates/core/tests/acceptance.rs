//! Acceptance suite. Every test prints one `PASS` or `FAIL` line for its
//! criterion before asserting it.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posinfer::abtest::{best_of_r_study, misclassification_rate, ABDesign};
use posinfer::alloc::{marginal_weights, max_slope, mixture, universal_b, AllocationRule, PositionWeights};
use posinfer::bounds::{design_bound_normalized, BoundConstants, Design};
use posinfer::dist::{order_statistic_means, true_revenue, QuantileGrid, ValueDistribution};
use posinfer::equil::{
    allpay_bid_curve, bid_curve, firstprice_bid_curve, invert, ks_distance, sample_bids, weighted_bid_error,
    PaymentFormat,
};
use posinfer::estim::{estimate_revenue, estimate_revenue_allpay, estimate_welfare};
use posinfer::harness::{
    epsilon_sweep, run_design, trial_errors, DesignChoice, ExperimentSpec, Normalization, TABLE_NORMALIZATION,
};

const EXACT_TOL: f64 = 1e-12;
const EXACTNESS_BUDGET: Duration = Duration::from_secs(1);
const ORACLE_REVENUE_TOL: f64 = 1e-6;
const ORACLE_FIRSTPRICE_TOL: f64 = 1e-4;
const ORACLE_ALLPAY_TOL: f64 = 1e-6;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);
const ROUND_TRIP_TOL: f64 = 5e-3;
const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(30);
const TABLE_REL_TOL: f64 = 0.20;
const TABLE_TRIALS: usize = 1000;
const TABLE_EPS: f64 = 0.001;
const SCALING_RANGE: (f64, f64) = (5.0, 20.0);
const SCALING_TRIALS: usize = 500;
const SWEEP_TRIALS: usize = 500;
/// Relative slack when calling consecutive sweep medians nonincreasing.
const SWEEP_FLAT_TOL: f64 = 0.01;
const CLASSIFIER_MIN_GAP: f64 = 0.02;
const CLASSIFIER_TRIALS: usize = 500;
const CLASSIFIER_RATIO: f64 = 0.1;
const BEST_OF_TRIALS: usize = 100;
const BEST_OF_MIN_HIT: f64 = 0.95;
const WELFARE_SE_MULT: f64 = 3.0;
const WELFARE_REPLICATES: usize = 30;
const WELFARE_ORACLE_DRAWS: usize = 1_000_000;
const DKW_LIMIT: f64 = 0.55;
const DKW_REPLICATES: usize = 200;
const SEED: u64 = 20_240_601;
/// Reference band of the design 2, n = 1024 row at N = 1e3 and 1e4.
const NORMALIZATION_BAND: (f64, f64) = (0.008, 0.011);

fn report(criterion: &str, pass: bool, detail: String) {
    println!("{} {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{criterion} failed: {detail}");
}

fn grid() -> QuantileGrid {
    QuantileGrid::new(10_000).unwrap()
}

fn unit(k: usize, n: usize) -> AllocationRule {
    AllocationRule::multi_unit(k, n).unwrap()
}

fn stair(n: usize) -> AllocationRule {
    AllocationRule::position(PositionWeights::uniform_stair(n).unwrap())
}

#[test]
fn criterion_01_exactness_identities() {
    let start = Instant::now();
    let g = QuantileGrid::new(2000).unwrap();
    let mut worst_self: f64 = 0.0;
    let mut worst_lin: f64 = 0.0;
    for (i, x) in [stair(8), unit(1, 4), unit(3, 5), mixture(&unit(1, 6), &stair(6), 0.3).unwrap()].iter().enumerate() {
        let curve = allpay_bid_curve(&ValueDistribution::Beta22, x, &g).unwrap();
        let s = sample_bids(&curve, 1000, SEED + i as u64).unwrap();
        let own = estimate_revenue_allpay(&s, x, x).unwrap().point;
        worst_self = worst_self.max((own - s.mean()).abs());

        let n = x.n();
        let (y1, y2) = (unit(1, n), stair(n));
        let lam = 0.37;
        let mixed = mixture(&y1, &y2, lam).unwrap();
        let p = |y: &AllocationRule| estimate_revenue(&s, x, y).unwrap().point;
        worst_lin = worst_lin.max((p(&mixed) - ((1.0 - lam) * p(&y1) + lam * p(&y2))).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut round_trip = true;
    for _ in 0..200 {
        let n = rng.random_range(2..=40);
        let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        w.sort_by(|a, b| b.total_cmp(a));
        let pw = PositionWeights::new(w).unwrap();
        let back = PositionWeights::from_marginals(&marginal_weights(&pw)).unwrap();
        round_trip &= back.weights() == pw.weights();
    }
    let elapsed = start.elapsed();
    report(
        "criterion 1 (exactness identities)",
        worst_self <= EXACT_TOL && worst_lin <= EXACT_TOL && round_trip && elapsed < EXACTNESS_BUDGET,
        format!("self {worst_self:.2e}, linearity {worst_lin:.2e}, marginal round trip {round_trip}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_analytic_oracles() {
    let start = Instant::now();
    let g = grid();
    let p = true_revenue(&ValueDistribution::Uniform01, &unit(1, 2), &g);
    let rev_err = (p - 1.0 / 6.0).abs();
    let fp = firstprice_bid_curve(&ValueDistribution::Uniform01, &unit(1, 2), &g).unwrap();
    let fp_err = g.points().zip(fp.bids()).map(|(q, b)| (b - q / 2.0).abs()).fold(0.0, f64::max);
    let ap = allpay_bid_curve(&ValueDistribution::Uniform01, &unit(1, 2), &g).unwrap();
    let ap_err = g.points().zip(ap.bids()).map(|(q, b)| (b - q * q / 2.0).abs()).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    report(
        "criterion 2 (analytic oracles)",
        rev_err <= ORACLE_REVENUE_TOL
            && fp_err <= ORACLE_FIRSTPRICE_TOL
            && ap_err <= ORACLE_ALLPAY_TOL
            && elapsed < ORACLE_BUDGET,
        format!("revenue {rev_err:.2e}, first-price curve {fp_err:.2e}, all-pay curve {ap_err:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_03_round_trip_inference() {
    let start = Instant::now();
    let g = grid();
    let mut worst = (0.0, String::new());
    for n in [4, 32] {
        for d in ["1", "2", "3"] {
            let (a, b) = d.parse::<DesignChoice>().unwrap().rules(n).unwrap();
            let c = mixture(&a, &b, TABLE_EPS).unwrap();
            for (role, rule) in [("incumbent", &a), ("treatment", &b), ("mixture", &c)] {
                for dist in [ValueDistribution::Uniform01, ValueDistribution::Beta22] {
                    for f in [PaymentFormat::AllPay, PaymentFormat::FirstPrice] {
                        let curve = bid_curve(f, &dist, rule, &g).unwrap();
                        let e = invert(&curve, rule).unwrap().sup_error(&dist, 0.01, 0.99);
                        if e > worst.0 {
                            worst = (e, format!("design {d} n={n} {role} {} {f}", dist.name()));
                        }
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        "criterion 3 (round-trip inference)",
        worst.0 <= ROUND_TRIP_TOL && elapsed < ROUND_TRIP_BUDGET,
        format!("worst sup error {:.2e} at {}, {elapsed:.2?}", worst.0, worst.1),
    );
}

#[test]
fn normalization_resolution() {
    let mut fits = Vec::new();
    for norm in [Normalization::RootNOverAgents, Normalization::RootOfNOverAgents] {
        let values: Vec<f64> = [1_000, 10_000]
            .iter()
            .map(|&samples| {
                let mut spec = ExperimentSpec::new(DesignChoice::Standard(Design::Two), 1024, samples, SEED);
                spec.trials = TABLE_TRIALS;
                let r = run_design(&spec).unwrap();
                r.raw_mad * norm.factor(1024, samples)
            })
            .collect();
        println!("  {norm:?}: {values:.4?}");
        if values.iter().all(|v| (NORMALIZATION_BAND.0..=NORMALIZATION_BAND.1).contains(v)) {
            fits.push(norm);
        }
    }
    report(
        "normalization resolution",
        fits == [TABLE_NORMALIZATION],
        format!("normalizations inside the reference band: {fits:?}; table uses {TABLE_NORMALIZATION:?}"),
    );
}

struct Cell {
    design: u8,
    n: usize,
    samples: usize,
    reference: f64,
    normalized: f64,
}

/// The reproduced grid cells with their reference normalized deviations.
fn table_cells() -> &'static [Cell] {
    static CELLS: OnceLock<Vec<Cell>> = OnceLock::new();
    CELLS.get_or_init(|| {
        let reference = [
            (1, 4, 1_000, 0.3573),
            (1, 4, 10_000, 0.3535),
            (1, 32, 1_000, 0.2821),
            (1, 32, 10_000, 0.2798),
            (2, 32, 1_000, 0.0472),
            (2, 32, 10_000, 0.0452),
            (2, 256, 1_000, 0.0162),
            (2, 256, 10_000, 0.0157),
            (3, 32, 1_000, 0.0798),
            (3, 32, 10_000, 0.0809),
            (3, 256, 1_000, 0.0323),
            (3, 256, 10_000, 0.0324),
        ];
        reference
            .iter()
            .map(|&(design, n, samples, reference)| {
                let mut spec =
                    ExperimentSpec::new(DesignChoice::Standard(Design::from_number(design).unwrap()), n, samples, SEED);
                spec.eps = TABLE_EPS;
                spec.trials = TABLE_TRIALS;
                let r = run_design(&spec).unwrap();
                assert_eq!(r.normalization, TABLE_NORMALIZATION);
                Cell { design, n, samples, reference, normalized: r.normalized_mad }
            })
            .collect()
    })
}

#[test]
fn criterion_04_mad_table_reproduction() {
    let mut misses = 0;
    for c in table_cells() {
        let rel = (c.normalized - c.reference).abs() / c.reference;
        let ok = rel <= TABLE_REL_TOL;
        misses += usize::from(!ok);
        println!(
            "  design {} n={} N={}: normalized MAD {:.4} vs reference {:.4} (rel {:+.1}%) {}",
            c.design,
            c.n,
            c.samples,
            c.normalized,
            c.reference,
            100.0 * (c.normalized - c.reference) / c.reference,
            if ok { "ok" } else { "miss" }
        );
    }
    let cells = table_cells().len();
    report(
        "criterion 4 (MAD table reproduction)",
        misses == 0,
        format!("{} of {cells} cells within {:.0}%", cells - misses, 100.0 * TABLE_REL_TOL),
    );
}

#[test]
fn criterion_05_bound_dominance() {
    let c = BoundConstants::default();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for cell in table_cells() {
        let bound = design_bound_normalized(Design::from_number(cell.design).unwrap(), cell.n, TABLE_EPS, &c);
        ok &= cell.normalized <= bound;
        worst = worst.max(cell.normalized / bound);
    }
    report("criterion 5 (bound dominance)", ok, format!("largest MAD / bound ratio {worst:.2e}"));
}

#[test]
fn criterion_06_root_n_scaling() {
    let mut ok = true;
    let mut ratios = Vec::new();
    for d in [Design::One, Design::Two, Design::Three] {
        let mad = |samples| {
            let mut spec = ExperimentSpec::new(DesignChoice::Standard(d), 32, samples, SEED);
            spec.trials = SCALING_TRIALS;
            run_design(&spec).unwrap().raw_mad
        };
        let ratio = mad(1_000) / mad(100_000);
        ok &= (SCALING_RANGE.0..=SCALING_RANGE.1).contains(&ratio);
        ratios.push(format!("design {} {ratio:.2}", d.number()));
    }
    report("criterion 6 (root-N scaling)", ok, format!("MAD(1e3) / MAD(1e5): {}", ratios.join(", ")));
}

#[test]
fn criterion_07_epsilon_sweep_shape() {
    let eps = [0.001, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.95];
    let mut ok = true;
    let mut notes = Vec::new();
    for d in [Design::One, Design::Two, Design::Three] {
        let mut spec = ExperimentSpec::new(DesignChoice::Standard(d), 32, 1_000, SEED);
        spec.trials = SWEEP_TRIALS;
        let med: Vec<f64> = epsilon_sweep(&spec, &eps).unwrap().iter().map(|r| r.median_rel_error).collect();
        let tail = &med[med.len() - 3..];
        let shape_ok = match d {
            Design::Two => tail.windows(2).all(|w| w[1] > w[0]),
            _ => {
                tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + SWEEP_FLAT_TOL))
                    && med[med.len() - 1] <= med[0] * (1.0 + SWEEP_FLAT_TOL)
            }
        };
        ok &= shape_ok;
        let shown: Vec<String> = med.iter().map(|m| format!("{m:.4}")).collect();
        notes.push(format!("design {} [{}]", d.number(), shown.join(" ")));
    }
    report("criterion 7 (epsilon sweep shape)", ok, notes.join("; "));
}

#[test]
fn criterion_08_classifier() {
    let g = grid();
    let n = 8;
    let pair = ABDesign {
        a: stair(n),
        bs: vec![unit(4, n), unit(3, n)],
        eps: 0.05,
        dist: ValueDistribution::Beta22,
        format: PaymentFormat::AllPay,
    };
    let small = misclassification_rate(&pair, 1.0, 100, CLASSIFIER_TRIALS, SEED, &g).unwrap();
    let large = misclassification_rate(&pair, 1.0, 10_000, CLASSIFIER_TRIALS, SEED, &g).unwrap();
    let pair_ok = small.gap.abs() >= CLASSIFIER_MIN_GAP
        && small.error_rate > 0.0
        && large.error_rate <= CLASSIFIER_RATIO * small.error_rate;

    let four = ABDesign { bs: (1..=4).map(|k| unit(k, n)).collect(), eps: 0.1, ..pair };
    let best = best_of_r_study(&four, 100_000, BEST_OF_TRIALS, SEED, &g).unwrap();
    let hit = 1.0 - best.error_rate;
    report(
        "criterion 8 (classifier)",
        pair_ok && hit >= BEST_OF_MIN_HIT,
        format!(
            "gap {:.4}, error rate {:.3} at N=1e2 vs {:.3} at N=1e4; best of 4 correct in {:.0}% of trials",
            small.gap,
            small.error_rate,
            large.error_rate,
            100.0 * hit
        ),
    );
}

#[test]
fn criterion_09_welfare() {
    let g = grid();
    let n = 8;
    let samples = 100_000;
    let x = AllocationRule::position(universal_b(n).unwrap());
    let w = PositionWeights::uniform_stair(n).unwrap();
    let curve = bid_curve(PaymentFormat::AllPay, &ValueDistribution::Beta22, &x, &g).unwrap();
    let est: Vec<f64> = (0..WELFARE_REPLICATES)
        .map(|r| {
            let s = sample_bids(&curve, samples, SEED ^ r as u64).unwrap();
            estimate_welfare(&s, &x, &w).unwrap().point
        })
        .collect();
    let mean = est.iter().sum::<f64>() / est.len() as f64;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt();

    let os = order_statistic_means(&ValueDistribution::Beta22, n, WELFARE_ORACLE_DRAWS, SEED).unwrap();
    let oracle = (1..=n).map(|k| w.w(k) * os.means[k - 1]).sum::<f64>() / n as f64;
    let oracle_se = (1..=n).map(|k| (w.w(k) * os.std_errors[k - 1]).powi(2)).sum::<f64>().sqrt() / n as f64;

    let single = est[0];
    let combined = (sd * sd + oracle_se * oracle_se).sqrt();
    report(
        "criterion 9 (welfare)",
        (single - oracle).abs() <= WELFARE_SE_MULT * combined,
        format!(
            "estimate {single:.5} vs oracle {oracle:.5}, |diff| {:.2e}, 3 SE {:.2e}",
            (single - oracle).abs(),
            WELFARE_SE_MULT * combined
        ),
    );
}

#[test]
fn criterion_10_slope_facts() {
    let grid_size = 20_000;
    let (lo, hi) = (1.0 / (2.0 * std::f64::consts::PI).sqrt(), 1.0 / std::f64::consts::PI.sqrt());
    let mut over_n = 0;
    let mut outside = Vec::new();
    let mut checked = 0;
    for n in 2..=64usize {
        for k in 1..n {
            let s = max_slope(&unit(k, n), grid_size).unwrap();
            over_n += usize::from(s > n as f64);
            if (2..=n - 1).contains(&k) {
                checked += 1;
                let ratio = s * ((k - 1).min(n - k) as f64).sqrt() / (n - 1) as f64;
                if !(lo..=hi).contains(&ratio) {
                    outside.push((n, k, ratio));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..200 {
        let n = rng.random_range(2..=64usize);
        let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        w.sort_by(|a, b| b.total_cmp(a));
        let rule = AllocationRule::position(PositionWeights::new(w).unwrap());
        over_n += usize::from(max_slope(&rule, grid_size).unwrap() > n as f64);
    }
    let sample: Vec<String> = outside.iter().take(4).map(|(n, k, r)| format!("n={n} k={k} ratio {r:.3}")).collect();
    report(
        "criterion 10 (slope facts)",
        over_n == 0 && outside.is_empty(),
        format!(
            "sup slope above n: {over_n}; bracket [{lo:.3}, {hi:.3}] violated for {} of {checked} (n, k) pairs, e.g. {}",
            outside.len(),
            sample.join(", ")
        ),
    );
}

#[test]
fn dkw_diagnostic() {
    let g = grid();
    let samples = 10_000;
    let x = stair(8);
    let curve = bid_curve(PaymentFormat::AllPay, &ValueDistribution::Beta22, &x, &g).unwrap();
    let mean_ks = (0..DKW_REPLICATES)
        .map(|r| ks_distance(&sample_bids(&curve, samples, SEED ^ r as u64).unwrap(), &curve))
        .sum::<f64>()
        / DKW_REPLICATES as f64;
    let scaled = mean_ks * (samples as f64).sqrt();
    let weighted = weighted_bid_error(&sample_bids(&curve, samples, SEED).unwrap(), &curve);
    println!("  weighted bid error sqrt(N) sup |b - b_hat| / b' = {weighted:.3} (diagnostic only)");
    report(
        "DKW diagnostic",
        scaled <= DKW_LIMIT,
        format!("E[sup |G_hat - G|] sqrt(N) = {scaled:.4} (limit {DKW_LIMIT})"),
    );
}

#[test]
fn signed_error_is_centered() {
    // Supporting check for criterion 4: the deviations are noise, not bias.
    let mut spec = ExperimentSpec::new(DesignChoice::Standard(Design::One), 32, 10_000, SEED);
    spec.trials = TABLE_TRIALS;
    let t = trial_errors(&spec).unwrap();
    let k = t.errors.len() as f64;
    let mean = t.errors.iter().sum::<f64>() / k;
    let sd = (t.errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    report("signed error centered", mean.abs() <= 3.0 * sd / k.sqrt(), format!("mean {mean:.2e}, sd {sd:.2e}"));
}
