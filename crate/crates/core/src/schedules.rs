//! Step sizes `(λₙ)`, their weights `aₙ = (λₙ−κ)(1−λₙ)`, and rates of
//! divergence `θ` with `Σ_{k≤θ(n)} aₖ ≥ n`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the number of weights summed while searching for `θ(n)`.
pub const THETA_TERM_CAP: u64 = 100_000_000;

/// Configuration form of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant {
        lambda: f64,
    },
    /// `prefix[n]` for `n < prefix.len()`, then `tail` evaluated at the same `n`.
    Table {
        prefix: Vec<f64>,
        tail: Box<ScheduleSpec>,
    },
    /// A named entry of [`FORMULAS`].
    Formula {
        name: String,
    },
}

type FormulaFn = fn(u64, f64) -> f64;

/// Named step-size formulas `(n, κ) ↦ λₙ`.
pub const FORMULAS: &[(&str, FormulaFn)] = &[
    ("half-plus-harmonic", |n, _| 0.5 + 1.0 / (4.0 * (n as f64 + 2.0))),
    ("midpoint-plus-harmonic", |n, k| 0.5 * (1.0 + k) + (1.0 - k) / (4.0 * (n as f64 + 2.0))),
    ("harmonic-toward-kappa", |n, k| k + (1.0 - k) / (n as f64 + 2.0)),
    ("alternating-midpoint", |n, k| {
        let swing = 0.25 * (1.0 - k);
        0.5 * (1.0 + k) + if n % 2 == 0 { swing } else { -swing }
    }),
];

pub fn formula(name: &str) -> Option<FormulaFn> {
    FORMULAS.iter().find(|(n, _)| *n == name).map(|(_, f)| *f)
}

#[derive(Clone)]
enum Rule {
    Constant(f64),
    Table { prefix: Vec<f64>, tail: Box<Rule> },
    Formula(FormulaFn),
}

impl Rule {
    fn compile(spec: &ScheduleSpec) -> Result<Rule> {
        Ok(match spec {
            ScheduleSpec::Constant { lambda } => Rule::Constant(*lambda),
            ScheduleSpec::Table { prefix, tail } => {
                Rule::Table { prefix: prefix.clone(), tail: Box::new(Rule::compile(tail)?) }
            }
            ScheduleSpec::Formula { name } => {
                Rule::Formula(formula(name).ok_or_else(|| Error::UnknownFormula(name.clone()))?)
            }
        })
    }

    fn at(&self, n: u64, kappa: f64) -> f64 {
        match self {
            Rule::Constant(l) => *l,
            Rule::Table { prefix, tail } => match prefix.get(n as usize) {
                Some(l) => *l,
                None => tail.at(n, kappa),
            },
            Rule::Formula(f) => f(n, kappa),
        }
    }
}

#[derive(Default)]
struct ThetaMemo {
    answers: BTreeMap<u64, u64>,
    // Σ_{k ≤ index} aₖ, and the largest target reached so far.
    index: u64,
    sum: f64,
    target: u64,
    started: bool,
}

/// A step-size sequence paired with the strictness constant it is used with.
///
/// Validity (`κ < λₙ < 1`) is checked lazily for each queried index.
pub struct StepSchedule {
    spec: ScheduleSpec,
    kappa: f64,
    rule: Rule,
    memo: Mutex<ThetaMemo>,
}

impl Clone for StepSchedule {
    fn clone(&self) -> Self {
        StepSchedule { spec: self.spec.clone(), kappa: self.kappa, rule: self.rule.clone(), memo: Mutex::default() }
    }
}

impl fmt::Debug for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StepSchedule").field("spec", &self.spec).field("kappa", &self.kappa).finish()
    }
}

impl StepSchedule {
    /// Compiles a schedule. Constant schedules are validated immediately.
    pub fn new(spec: ScheduleSpec, kappa: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&kappa) {
            return Err(Error::KappaOutOfRange(kappa));
        }
        let rule = Rule::compile(&spec)?;
        let s = StepSchedule { spec, kappa, rule, memo: Mutex::default() };
        if let Rule::Constant(_) = s.rule {
            s.lambda_at(0)?;
        }
        Ok(s)
    }

    pub fn constant(lambda: f64, kappa: f64) -> Result<Self> {
        Self::new(ScheduleSpec::Constant { lambda }, kappa)
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `Some(λ)` for constant schedules.
    pub fn constant_lambda(&self) -> Option<f64> {
        match self.rule {
            Rule::Constant(l) => Some(l),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.spec {
            ScheduleSpec::Constant { lambda } => format!("constant({lambda})"),
            ScheduleSpec::Table { prefix, .. } => format!("table(prefix={})", prefix.len()),
            ScheduleSpec::Formula { name } => format!("formula({name})"),
        }
    }

    /// `λₙ`, rejected unless `κ < λₙ < 1`.
    pub fn lambda_at(&self, n: u64) -> Result<f64> {
        let lambda = self.rule.at(n, self.kappa);
        if !(lambda > self.kappa && lambda < 1.0) {
            return Err(Error::StepSizeViolation { index: n, lambda, kappa: self.kappa });
        }
        Ok(lambda)
    }

    /// `aₙ = (λₙ−κ)(1−λₙ) > 0`.
    pub fn weight_at(&self, n: u64) -> Result<f64> {
        let lambda = self.lambda_at(n)?;
        let w = (lambda - self.kappa) * (1.0 - lambda);
        if w <= 0.0 {
            return Err(Error::StepSizeViolation { index: n, lambda, kappa: self.kappa });
        }
        Ok(w)
    }

    /// Least `m` with `Σ_{k=0}^{m} aₖ ≥ n`. Partial sums run left to right
    /// and are memoized; concurrent callers see the same answers as a
    /// sequential caller would.
    pub fn compute_theta(&self, n: u64) -> Result<u64> {
        if n == 0 {
            return Ok(0);
        }
        let mut memo = self.memo.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(&m) = memo.answers.get(&n) {
            return Ok(m);
        }
        if !memo.started {
            memo.sum = self.weight_at(0)?;
            memo.index = 0;
            memo.started = true;
        }
        let m = if n >= memo.target {
            let (mut index, mut sum) = (memo.index, memo.sum);
            self.advance(&mut index, &mut sum, n)?;
            memo.index = index;
            memo.sum = sum;
            memo.target = n;
            index
        } else {
            let mut index = 0;
            let mut sum = self.weight_at(0)?;
            self.advance(&mut index, &mut sum, n)?;
            index
        };
        memo.answers.insert(n, m);
        Ok(m)
    }

    fn advance(&self, index: &mut u64, sum: &mut f64, target: u64) -> Result<()> {
        let goal = target as f64;
        while *sum < goal {
            *index += 1;
            if *index >= THETA_TERM_CAP {
                return Err(Error::DivergenceNotWitnessed { target, cap: THETA_TERM_CAP });
            }
            *sum += self.weight_at(*index)?;
        }
        Ok(())
    }
}

/// Where a rate of divergence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateSource {
    ClosedForm,
    Computed,
    Explicit,
}

type RateFn = dyn Fn(u64) -> u64 + Send + Sync;

#[derive(Clone)]
enum RateRule {
    Linear(u64),
    Computed(Arc<StepSchedule>),
    Custom(Arc<RateFn>),
}

/// A map `θ : ℕ → ℕ` offered as a witness that `Σ aₙ` diverges.
///
/// The witness property is not assumed; [`verify_theta`] tests it.
#[derive(Clone)]
pub struct DivergenceRate {
    rule: RateRule,
    source: RateSource,
}

impl fmt::Debug for DivergenceRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl DivergenceRate {
    /// `θ(n) = coefficient · n`.
    pub fn linear(coefficient: u64, source: RateSource) -> Self {
        DivergenceRate { rule: RateRule::Linear(coefficient), source }
    }

    /// `θ(n) = compute_theta(schedule, n)`.
    pub fn computed(schedule: Arc<StepSchedule>) -> Self {
        DivergenceRate { rule: RateRule::Computed(schedule), source: RateSource::Computed }
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(u64) -> u64 + Send + Sync + 'static,
    {
        DivergenceRate { rule: RateRule::Custom(Arc::new(f)), source: RateSource::Explicit }
    }

    pub fn source(&self) -> RateSource {
        self.source
    }

    pub fn coefficient(&self) -> Option<u64> {
        match self.rule {
            RateRule::Linear(c) => Some(c),
            _ => None,
        }
    }

    pub fn eval(&self, n: u64) -> Result<u64> {
        match &self.rule {
            RateRule::Linear(c) => c.checked_mul(n).ok_or(Error::RateOverflow(n)),
            RateRule::Computed(s) => s.compute_theta(n),
            RateRule::Custom(f) => Ok(f(n)),
        }
    }

    pub fn describe(&self) -> String {
        match &self.rule {
            RateRule::Linear(c) => format!("linear({c})"),
            RateRule::Computed(s) => format!("computed({})", s.label()),
            RateRule::Custom(_) => "custom".to_string(),
        }
    }
}

/// Ceiling that snaps to an integer within `1e-9` relative, so ratios such
/// as `1/(1/9)` that land a few ulps above an integer do not round up.
pub fn guarded_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs() {
        r
    } else {
        x.ceil()
    }
}

/// Closed-form rate for a constant step: `θ(n) = ⌈1/((λ−κ)(1−λ))⌉ · n`.
pub fn theta_constant(lambda: f64, kappa: f64) -> Result<DivergenceRate> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::KappaOutOfRange(kappa));
    }
    if !(lambda > kappa && lambda < 1.0) {
        return Err(Error::StepSizeViolation { index: 0, lambda, kappa });
    }
    let c = guarded_ceil(1.0 / ((lambda - kappa) * (1.0 - lambda)));
    if !(c.is_finite() && c < u64::MAX as f64) {
        return Err(Error::InvalidParameter(format!("weight for lambda={lambda} too small")));
    }
    Ok(DivergenceRate::linear(c as u64, RateSource::ClosedForm))
}

/// The natural rate for a schedule: closed form when constant, computed otherwise.
pub fn default_rate(schedule: &Arc<StepSchedule>) -> Result<DivergenceRate> {
    match schedule.constant_lambda() {
        Some(l) => theta_constant(l, schedule.kappa()),
        None => Ok(DivergenceRate::computed(Arc::clone(schedule))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaFailure {
    pub n: u64,
    pub theta: u64,
    pub partial_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaReport {
    pub ok: bool,
    pub first_failure: Option<ThetaFailure>,
}

/// Checks `Σ_{k=0}^{θ(n)} aₖ ≥ n − tol` for every `n ≤ n_max`.
pub fn verify_theta(s: &StepSchedule, rate: &DivergenceRate, n_max: u64, tol: f64) -> Result<ThetaReport> {
    let mut index = 0u64;
    let mut sum = s.weight_at(0)?;
    for n in 0..=n_max {
        let theta = rate.eval(n)?;
        if theta >= THETA_TERM_CAP {
            return Err(Error::HorizonTooLarge(theta));
        }
        if theta < index {
            index = 0;
            sum = s.weight_at(0)?;
        }
        while index < theta {
            index += 1;
            sum += s.weight_at(index)?;
        }
        if sum < n as f64 - tol {
            return Ok(ThetaReport { ok: false, first_failure: Some(ThetaFailure { n, theta, partial_sum: sum }) });
        }
    }
    Ok(ThetaReport { ok: true, first_failure: None })
}
