//! Closed-form error bounds for the revenue, welfare and classification
//! estimators.
//!
//! Every bound is stated up to constants: the explicit leading constant (40)
//! and the unspecified `O(1)` factors are carried in [`BoundConstants`] so a
//! report can say which values were used.

use serde::Serialize;

use crate::alloc::AllocationRule;

/// Constants plugged into the bound formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundConstants {
    /// Explicit leading constant of the `1/sqrt(N)` terms.
    pub leading: f64,
    /// Stand-in for every `O(1)` factor.
    pub big_o: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { leading: 40.0, big_o: 1.0 }
    }
}

/// Suprema of the source rule `x` and target rule `y` over the estimator's
/// clamped evaluation points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundInputs {
    pub samples: usize,
    pub n: usize,
    pub eps: f64,
    pub sup_yprime: f64,
    pub sup_xprime: f64,
    /// `sup_{q: y'(q) >= 1} x'(q) / y'(q)`; zero when the set is empty.
    pub ratio_up: f64,
    /// `sup_q y'(q) / x'(q)`.
    pub ratio_down: f64,
    /// `sup_q 1 / x'(q)`.
    pub sup_inv_xprime: f64,
}

impl BoundInputs {
    /// Suprema over `q = i / N`, `i = 0..=N`, with the endpoints clamped to
    /// `[1/(2N), 1 - 1/(2N)]`.
    pub fn from_rules(x: &AllocationRule, y: &AllocationRule, samples: usize, eps: f64) -> Self {
        let mut out = Self {
            samples,
            n: x.n(),
            eps,
            sup_yprime: 0.0,
            sup_xprime: 0.0,
            ratio_up: 0.0,
            ratio_down: 0.0,
            sup_inv_xprime: 0.0,
        };
        for i in 0..=samples {
            out.absorb(x, y, clamp_quantile(i as f64 / samples as f64, samples));
        }
        out
    }

    fn absorb(&mut self, x: &AllocationRule, y: &AllocationRule, q: f64) {
        let (lx, ly) = (x.ln_xprime(q), y.ln_xprime(q));
        let (xp, yp) = (lx.exp(), ly.exp());
        self.sup_xprime = self.sup_xprime.max(xp);
        self.sup_yprime = self.sup_yprime.max(yp);
        self.ratio_down = self.ratio_down.max((ly - lx).exp());
        self.sup_inv_xprime = self.sup_inv_xprime.max((-lx).exp());
        if yp >= 1.0 {
            self.ratio_up = self.ratio_up.max((lx - ly).exp());
        }
    }

    /// `log max{ratio_up, ratio_down}` with the argument floored at `e`.
    pub fn log_ratio(&self) -> f64 {
        floored_ln(self.ratio_up.max(self.ratio_down))
    }
}

pub(crate) fn clamp_quantile(q: f64, samples: usize) -> f64 {
    let d = 0.5 / samples as f64;
    q.clamp(d, 1.0 - d)
}

fn floored_ln(x: f64) -> f64 {
    x.max(std::f64::consts::E).ln()
}

fn sqrt_n_log_n(n: usize) -> f64 {
    let n = n as f64;
    (n * n.ln()).sqrt()
}

/// Mean absolute error bound for a multi-unit target:
/// `(40/sqrt N) sup y' log max{...}`.
pub fn bound_allpay_k(inputs: &BoundInputs, c: &BoundConstants) -> f64 {
    c.leading / (inputs.samples as f64).sqrt() * inputs.sup_yprime * inputs.log_ratio()
}

/// Bound for an arbitrary position-auction target; adds `sqrt(n log n)` and
/// the `O(1/N)` bias term.
pub fn bound_general_y(inputs: &BoundInputs, c: &BoundConstants) -> f64 {
    let root_n = (inputs.samples as f64).sqrt();
    c.leading / root_n * sqrt_n_log_n(inputs.n) * inputs.sup_yprime * inputs.log_ratio() + bound_bias(inputs, c)
}

/// First-price sources obey the same bounds as all-pay ones.
pub fn bound_firstprice(inputs: &BoundInputs, multi_unit_target: bool, c: &BoundConstants) -> f64 {
    if multi_unit_target {
        bound_allpay_k(inputs, c)
    } else {
        bound_general_y(inputs, c)
    }
}

/// Bias of the estimator: `(O(1)/N) sup x' sup (y'/x')`.
pub fn bound_bias(inputs: &BoundInputs, c: &BoundConstants) -> f64 {
    c.big_o / inputs.samples as f64 * inputs.sup_xprime * inputs.ratio_down
}

/// Error bound for the expected-value estimator.
pub fn bound_expected_value(inputs: &BoundInputs, c: &BoundConstants) -> f64 {
    let root_n = (inputs.samples as f64).sqrt();
    c.leading / root_n * sqrt_n_log_n(inputs.n) * floored_ln(inputs.sup_xprime.max(inputs.sup_inv_xprime))
        + c.big_o / inputs.samples as f64 * inputs.sup_xprime * inputs.sup_inv_xprime
}

/// Idealized A/B test that sees `eps N` bids from the treatment alone.
pub fn bound_ideal_ab(eps: f64, samples: usize, sup_yprime: f64, c: &BoundConstants) -> f64 {
    c.big_o * sup_yprime / (eps * samples as f64).sqrt()
}

/// Position-auction treatment mixed in with weight `eps`.
pub fn bound_mixture(eps: f64, samples: usize, n: usize, sup_yprime: f64, c: &BoundConstants) -> f64 {
    c.big_o * sqrt_n_log_n(n) * (n as f64 / eps).ln() * sup_yprime / (samples as f64).sqrt()
}

/// Multi-unit treatment mixed in with weight `eps`.
pub fn bound_mixture_k(eps: f64, samples: usize, n: usize, sup_yprime: f64, c: &BoundConstants) -> f64 {
    c.leading * (n as f64 / eps).ln() * sup_yprime / (samples as f64).sqrt()
}

/// Simultaneous bound for every multi-unit revenue under the universal B test.
pub fn bound_universal(eps: f64, samples: usize, n: usize, c: &BoundConstants) -> f64 {
    let n = n as f64;
    c.leading * n * (n + (1.0 / eps).ln()) / (samples as f64).sqrt()
}

/// Misclassification probability of `1{P1 - alpha P2 > 0}` at true margin `a`.
pub fn bound_classifier(samples: usize, n: usize, eps: f64, alpha: f64, a: f64, c: &BoundConstants) -> f64 {
    let n = n as f64;
    let exponent = c.big_o * samples as f64 * a * a / (alpha * alpha * n.powi(3) * (n / eps).ln());
    (-exponent).exp()
}

/// Error probability of picking the best of `r` candidates, each mixed in with
/// weight `eps / r`, when the top two revenues differ by `a`.
pub fn bound_best_of_r(samples: usize, n: usize, eps: f64, r: usize, a: f64, c: &BoundConstants) -> f64 {
    let nf = n as f64;
    let exponent = c.big_o * samples as f64 * a * a / (nf.powi(3) * (r as f64 * nf / eps).ln());
    r as f64 * (-exponent).exp()
}

/// Per-agent welfare bound under the universal B test.
pub fn bound_welfare(eps: f64, samples: usize, n: usize, c: &BoundConstants) -> f64 {
    let root_n = (samples as f64).sqrt();
    let nf = n as f64;
    c.leading * nf * nf.ln() * (nf + (1.0 / eps).ln()) / root_n
        + c.leading * sqrt_n_log_n(n) * (nf / eps).ln() / root_n
        + c.big_o * nf / (eps * samples as f64)
}

/// The three simulation designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Design {
    /// One-unit incumbent, uniform-stair treatment.
    One,
    /// Uniform-stair incumbent, one-unit treatment.
    Two,
    /// `(n-1)`-unit incumbent, one-unit treatment.
    Three,
}

impl Design {
    pub fn number(&self) -> u8 {
        match self {
            Design::One => 1,
            Design::Two => 2,
            Design::Three => 3,
        }
    }

    pub fn from_number(d: u8) -> Option<Self> {
        match d {
            1 => Some(Design::One),
            2 => Some(Design::Two),
            3 => Some(Design::Three),
            _ => None,
        }
    }
}

/// Design-specific specialization of the bounds:
/// design 1 `(40 sqrt(n log n)/sqrt N) log max(n, 1/eps) + O(n/N)`,
/// designs 2 and 3 `(40 n / sqrt N) log(1/eps)`.
pub fn design_bound(design: Design, n: usize, samples: usize, eps: f64, c: &BoundConstants) -> f64 {
    let root_n = (samples as f64).sqrt();
    let nf = n as f64;
    match design {
        Design::One => c.leading * sqrt_n_log_n(n) / root_n * nf.max(1.0 / eps).ln() + c.big_o * nf / samples as f64,
        Design::Two | Design::Three => c.leading * nf / root_n * (1.0 / eps).ln(),
    }
}

/// Leading term of [`design_bound`] multiplied by `sqrt(N)/n`, which makes it
/// independent of `N`.
pub fn design_bound_normalized(design: Design, n: usize, eps: f64, c: &BoundConstants) -> f64 {
    let nf = n as f64;
    match design {
        Design::One => c.leading * sqrt_n_log_n(n) / nf * nf.max(1.0 / eps).ln(),
        Design::Two | Design::Three => c.leading * (1.0 / eps).ln(),
    }
}

/// One named bound with the constants used to evaluate it.
#[derive(Clone, Debug, Serialize)]
pub struct BoundRow {
    pub name: &'static str,
    pub value: f64,
    pub leading: f64,
    pub big_o: f64,
}

/// All bounds that apply to estimating `y` from bids of `x` at `samples` bids.
pub fn bound_table(
    x: &AllocationRule,
    y: &AllocationRule,
    samples: usize,
    eps: f64,
    c: &BoundConstants,
) -> Vec<BoundRow> {
    let inputs = BoundInputs::from_rules(x, y, samples, eps);
    let n = x.n();
    let row = |name, value| BoundRow { name, value, leading: c.leading, big_o: c.big_o };
    vec![
        row("multi_unit_target", bound_allpay_k(&inputs, c)),
        row("general_target", bound_general_y(&inputs, c)),
        row("bias", bound_bias(&inputs, c)),
        row("expected_value", bound_expected_value(&inputs, c)),
        row("ideal_ab", bound_ideal_ab(eps, samples, inputs.sup_yprime, c)),
        row("mixture", bound_mixture(eps, samples, n, inputs.sup_yprime, c)),
        row("mixture_multi_unit", bound_mixture_k(eps, samples, n, inputs.sup_yprime, c)),
        row("universal", bound_universal(eps, samples, n, c)),
        row("welfare", bound_welfare(eps, samples, n, c)),
    ]
}
