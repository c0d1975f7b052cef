use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use posinfer::abtest::{best_of_r_study, misclassification_rate, ABDesign};
use posinfer::alloc::{mixture, AllocationRule, RulePreset};
use posinfer::bounds::{bound_best_of_r, bound_classifier, bound_table, design_bound, BoundConstants, BoundRow};
use posinfer::dist::{expected_value, true_revenue, QuantileGrid, ValueDistribution, DEFAULT_GRID};
use posinfer::equil::{bid_curve, sample_bids, BidSample, PaymentFormat};
use posinfer::estim::{estimate_expected_value, estimate_revenue, estimate_welfare, write_rows};
use posinfer::harness::{
    config_args, epsilon_sweep, mad_table, read_config, run_design, write_csv, DesignChoice, ExperimentSpec, MadRow,
    MAD_TABLE_VERSION, SWEEP_VERSION, TABLE_AGENTS, TABLE_SAMPLES,
};
use posinfer::{Error, Result};

#[derive(Parser)]
#[command(name = "posinfer", version, about = "Counterfactual revenue and welfare estimation for position auctions")]
#[command(args_override_self = true)]
struct Cli {
    /// Flat key=value file; its entries act as flags placed before the command line ones.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean absolute deviation of the revenue estimator for one design cell.
    Simulate(SimulateArgs),
    /// Median relative error across mixture weights.
    Sweep(SweepArgs),
    /// One estimate from a bid CSV.
    Estimate(EstimateArgs),
    /// Revenue comparison between candidates mixed into an incumbent.
    Compare(CompareArgs),
    /// Every applicable error bound for a design.
    Bounds(BoundsArgs),
    /// Full grid of normalized deviations for one design.
    Table(TableArgs),
    /// Draw equilibrium bids and write them as a CSV with a JSON sidecar.
    Sample(SampleArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Value distribution: uniform, beta22 or a CSV of q,v pairs.
    #[arg(long, default_value = "beta22", value_parser = parse_dist)]
    dist: ValueDistribution,
    #[arg(long, default_value = "allpay")]
    format: PaymentFormat,
    /// Quantile grid intervals for bid curves and quadrature.
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// 1, 2, 3 or custom:A;B with rule presets A and B.
    #[arg(long)]
    design: DesignChoice,
    #[arg(long)]
    n: usize,
    #[arg(long = "N")]
    samples: usize,
    #[arg(long, default_value_t = 0.001)]
    eps: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    design: DesignChoice,
    #[arg(long, default_value_t = 32)]
    n: usize,
    #[arg(long = "N", default_value_t = 1000)]
    samples: usize,
    /// Comma-separated mixture weights.
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.05,0.1,0.2,0.4,0.6,0.8,0.95")]
    eps_list: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV with a `bid` column.
    #[arg(long)]
    bids: PathBuf,
    /// Rule the bids were placed under; read from the sidecar when absent.
    #[arg(long)]
    source: Option<RulePreset>,
    /// Rule whose revenue is estimated.
    #[arg(long, default_value = "uniform-stair")]
    target: RulePreset,
    /// revenue, expected-value or welfare.
    #[arg(long, default_value = "revenue")]
    quantity: String,
    #[arg(long)]
    format: Option<PaymentFormat>,
    #[arg(long)]
    n: Option<usize>,
    /// Distribution used to report the true value alongside the estimate.
    #[arg(long, value_parser = parse_dist)]
    truth_dist: Option<ValueDistribution>,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Incumbent rule.
    #[arg(long, default_value = "one-unit")]
    a: RulePreset,
    #[arg(long)]
    b1: Option<RulePreset>,
    #[arg(long)]
    b2: Option<RulePreset>,
    /// Candidates for a best-of-r test, separated by ';'.
    #[arg(long, value_delimiter = ';')]
    candidates: Vec<RulePreset>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.001)]
    eps: f64,
    #[arg(long)]
    n: usize,
    #[arg(long = "N")]
    samples: usize,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    design: DesignChoice,
    #[arg(long)]
    n: usize,
    #[arg(long = "N")]
    samples: usize,
    #[arg(long, default_value_t = 0.001)]
    eps: f64,
    #[arg(long, default_value_t = 40.0)]
    leading: f64,
    #[arg(long, default_value_t = 1.0)]
    big_o: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long)]
    design: DesignChoice,
    #[arg(long, value_delimiter = ',', default_values_t = TABLE_AGENTS)]
    agents: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = TABLE_SAMPLES)]
    samples: Vec<usize>,
    #[arg(long, default_value_t = 0.001)]
    eps: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    source: RulePreset,
    #[arg(long)]
    n: usize,
    #[arg(long = "N")]
    samples: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

fn parse_dist(s: &str) -> Result<ValueDistribution> {
    ValueDistribution::parse(s)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn grid(m: usize) -> Result<QuantileGrid> {
    QuantileGrid::new(m)
}

fn spec(
    design: DesignChoice,
    n: usize,
    samples: usize,
    eps: f64,
    trials: usize,
    seed: u64,
    c: &Common,
) -> Result<ExperimentSpec> {
    let mut s = ExperimentSpec::new(design, n, samples, seed);
    s.eps = eps;
    s.trials = trials;
    s.grid = grid(c.grid)?;
    s.dist = c.dist.clone();
    s.format = c.format;
    Ok(s)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let s = spec(a.design, a.n, a.samples, a.eps, a.trials, a.seed, &a.common)?;
    let r = run_design(&s)?;
    write_csv(output(&a.common.out)?, MAD_TABLE_VERSION, &[MadRow::new(&s, &r)])
}

fn sweep(a: SweepArgs) -> Result<()> {
    let s = spec(a.design, a.n, a.samples, 0.5, a.trials, a.seed, &a.common)?;
    let rows = epsilon_sweep(&s, &a.eps_list)?;
    write_csv(output(&a.common.out)?, SWEEP_VERSION, &rows)
}

fn table(a: TableArgs) -> Result<()> {
    let s = spec(a.design, 2, 1, a.eps, a.trials, a.seed, &a.common)?;
    let rows = mad_table(&s, &a.agents, &a.samples)?;
    write_csv(output(&a.common.out)?, MAD_TABLE_VERSION, &rows)
}

fn sample(a: SampleArgs) -> Result<()> {
    let rule = a.source.build(a.n)?;
    let curve = bid_curve(a.common.format, &a.common.dist, &rule, &grid(a.common.grid)?)?;
    let s = sample_bids(&curve, a.samples, a.seed)?;
    match &a.common.out {
        Some(p) => s.write_csv(p),
        None => Err(Error::Argument("sample needs --out for the bid CSV and its sidecar".into())),
    }
}

fn load_sample(a: &EstimateArgs) -> Result<BidSample> {
    let from_sidecar = BidSample::read_csv(&a.bids, None).ok();
    let format = a.format.or(from_sidecar.as_ref().map(|s| s.format()));
    let n = a.n.or(from_sidecar.as_ref().map(|s| s.n()));
    match (&a.source, format, n) {
        (Some(src), Some(f), Some(n)) => BidSample::read_csv(&a.bids, Some((f, src.build(n)?))),
        (None, _, _) if from_sidecar.is_some() && a.format.is_none() && a.n.is_none() => {
            Ok(from_sidecar.expect("checked"))
        }
        _ => Err(Error::Argument(format!(
            "{}: give --source, --format and --n, or provide a sidecar {}.json",
            a.bids.display(),
            a.bids.display()
        ))),
    }
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let s = load_sample(&a)?;
    let x = s.rule().clone();
    let n = x.n();
    let g = grid(a.grid)?;
    let (report, truth) = match a.quantity.as_str() {
        "revenue" => {
            let y = a.target.build(n)?;
            let truth = a.truth_dist.as_ref().map(|d| true_revenue(d, &y, &g));
            (estimate_revenue(&s, &x, &y)?, truth)
        }
        "expected-value" => {
            let truth = a.truth_dist.as_ref().map(|d| expected_value(d, &g));
            (estimate_expected_value(&s, &x)?, truth)
        }
        "welfare" => {
            let w = a.target.weights(n)?;
            let truth = a.truth_dist.as_ref().map(|d| {
                let w1 = w.w(1);
                let ev = expected_value(d, &g);
                let pay: f64 = (1..n)
                    .map(|k| {
                        let y = AllocationRule::multi_unit(k, n).expect("valid k");
                        (w1 - w.w(k + 1)) * true_revenue(d, &y, &g) / k as f64
                    })
                    .sum();
                w1 * ev - pay
            });
            (estimate_welfare(&s, &x, &w)?, truth)
        }
        other => return Err(Error::Argument(format!("unknown quantity '{other}'"))),
    };
    write_rows(output(&a.out)?, &[report.to_row("custom", None, truth)])
}

#[derive(Serialize)]
struct CompareRow {
    n: usize,
    #[serde(rename = "N")]
    samples: usize,
    eps: f64,
    alpha: f64,
    trials: usize,
    seed: u64,
    truth_first: f64,
    truth_second: f64,
    true_verdict: u8,
    verdict: u8,
    margin: f64,
    bound: f64,
    error_rate: f64,
}

#[derive(Serialize)]
struct BestOfRow {
    n: usize,
    #[serde(rename = "N")]
    samples: usize,
    eps: f64,
    trials: usize,
    seed: u64,
    candidates: usize,
    true_best: usize,
    chosen: usize,
    gap: f64,
    bound: f64,
    error_rate: f64,
}

fn compare(a: CompareArgs) -> Result<()> {
    let g = grid(a.common.grid)?;
    let incumbent = a.a.build(a.n)?;
    let consts = BoundConstants::default();
    let mut out = output(&a.common.out)?;
    if !a.candidates.is_empty() {
        let bs = a.candidates.iter().map(|c| c.build(a.n)).collect::<Result<Vec<_>>>()?;
        let r = bs.len();
        let d = ABDesign { a: incumbent, bs, eps: a.eps, dist: a.common.dist.clone(), format: a.common.format };
        let study = best_of_r_study(&d, a.samples, a.trials, a.seed, &g)?;
        let chosen =
            posinfer::abtest::best_of_r(&one_sample(&d, a.samples, a.seed, &g)?, &test_rule(&d)?, &d.bs)?.index;
        let true_best = argmax(&study.truth);
        let row = BestOfRow {
            n: a.n,
            samples: a.samples,
            eps: a.eps,
            trials: a.trials,
            seed: a.seed,
            candidates: r,
            true_best,
            chosen,
            gap: study.gap,
            bound: bound_best_of_r(a.samples, a.n, a.eps, r, study.gap, &consts).min(1.0),
            error_rate: study.error_rate,
        };
        return write_csv(&mut out, "# posinfer best-of-r v1", &[row]);
    }
    let (Some(b1), Some(b2)) = (&a.b1, &a.b2) else {
        return Err(Error::Argument("compare needs --b1 and --b2, or --candidates".into()));
    };
    let d = ABDesign {
        a: incumbent,
        bs: vec![b1.build(a.n)?, b2.build(a.n)?],
        eps: a.eps,
        dist: a.common.dist.clone(),
        format: a.common.format,
    };
    let study = misclassification_rate(&d, a.alpha, a.samples, a.trials, a.seed, &g)?;
    let s = one_sample(&d, a.samples, a.seed, &g)?;
    let cmp = posinfer::abtest::compare_revenues(&s, &test_rule(&d)?, &d.bs[0], &d.bs[1], a.alpha)?;
    let row = CompareRow {
        n: a.n,
        samples: a.samples,
        eps: a.eps,
        alpha: a.alpha,
        trials: a.trials,
        seed: a.seed,
        truth_first: study.truth[0],
        truth_second: study.truth[1],
        true_verdict: u8::from(study.gap > 0.0),
        verdict: cmp.verdict,
        margin: cmp.margin,
        bound: bound_classifier(a.samples, a.n, a.eps, a.alpha, study.gap.abs(), &consts),
        error_rate: study.error_rate,
    };
    write_csv(&mut out, "# posinfer compare v1", &[row])
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

fn test_rule(d: &ABDesign) -> Result<AllocationRule> {
    posinfer::abtest::build_test_mechanism(d)
}

/// The sample used by trial 0 of a study.
fn one_sample(d: &ABDesign, samples: usize, seed: u64, g: &QuantileGrid) -> Result<BidSample> {
    let curve = bid_curve(d.format, &d.dist, &test_rule(d)?, g)?;
    sample_bids(&curve, samples, seed)
}

fn bounds(a: BoundsArgs) -> Result<()> {
    let consts = BoundConstants { leading: a.leading, big_o: a.big_o };
    let (ra, rb) = a.design.rules(a.n)?;
    let c = mixture(&ra, &rb, a.eps)?;
    let mut rows = bound_table(&c, &rb, a.samples, a.eps, &consts);
    if let Some(d) = a.design.standard() {
        rows.push(BoundRow {
            name: "design",
            value: design_bound(d, a.n, a.samples, a.eps, &consts),
            leading: consts.leading,
            big_o: consts.big_o,
        });
    }
    write_csv(output(&a.out)?, "# posinfer bounds v1", &rows)
}

/// Moves `--config FILE` out of `argv` and splices its flags in right after
/// the subcommand, so explicit flags still win.
fn expand_config(mut argv: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    let mut i = 1;
    while i < argv.len() {
        if argv[i] == "--config" && i + 1 < argv.len() {
            path = Some(argv.remove(i + 1));
            argv.remove(i);
        } else if let Some(p) = argv[i].strip_prefix("--config=") {
            path = Some(p.to_string());
            argv.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let extra = config_args(&read_config(Path::new(&path))?);
    let at = argv.iter().skip(1).position(|a| !a.starts_with('-')).map_or(argv.len(), |p| p + 2);
    argv.splice(at.min(argv.len())..at.min(argv.len()), extra);
    Ok(argv)
}

fn configure_workers() {
    if let Some(k) = std::env::var("POSINFER_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // ignore failure: the pool may already be initialized
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Estimate(a) => estimate(a),
        Command::Compare(a) => compare(a),
        Command::Bounds(a) => bounds(a),
        Command::Table(a) => table(a),
        Command::Sample(a) => sample(a),
    }
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("posinfer: {}: {e}", e.module());
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    configure_workers();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("posinfer: {}: {e}", e.module());
            ExitCode::from(1)
        }
    }
}
