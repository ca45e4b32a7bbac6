//! The convergence rate `Φ(ε, b, θ) = θ(⌈b²/ε²⌉)` and end-to-end
//! certification of a run against it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::Vector;
use crate::iteration::{self, RecordMode, StepObserver, StepView, MAX_HORIZON};
use crate::operators::{approx_fixed_point, check_strict, residual, BallSampler, Operator};
use crate::schedules::{guarded_ceil, theta_constant, DivergenceRate, StepSchedule};
use crate::verify::{
    self, names, CheckKind, CheckOutcome, DescentMonitor, GrowthMonitor, Witness, BOUNDARY_BAND, INEQUALITY_TOL,
};

/// Tolerance levels probed when looking for approximate fixed points.
pub const APPROX_FIXED_POINT_DELTAS: [f64; 3] = [1e-2, 1e-4, 1e-6];
/// Default horizon extension is `Φ` itself up to this size, zero beyond.
pub const EXTRA_HORIZON_LIMIT: u64 = 100_000;

fn check_eps_b(eps: f64, b: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive and finite, got {eps}")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("b must be positive and finite, got {b}")));
    }
    Ok(())
}

/// `⌈b²/ε²⌉`, snapping ratios within `1e-9` relative of an integer.
pub fn ratio_ceil(b: f64, eps: f64) -> Result<u64> {
    check_eps_b(eps, b)?;
    let k = guarded_ceil((b / eps) * (b / eps));
    if k >= u64::MAX as f64 {
        return Err(Error::RateOverflow(u64::MAX));
    }
    Ok(k as u64)
}

/// Number of steps after which the residual is guaranteed below `eps`.
pub fn phi(eps: f64, b: f64, rate: &DivergenceRate) -> Result<u64> {
    rate.eval(ratio_ceil(b, eps)?)
}

/// `Φ` for a constant step `λ`: `⌈1/((λ−κ)(1−λ))⌉ · ⌈b²/ε²⌉`.
pub fn phi_krasnoselskii(eps: f64, b: f64, lambda: f64, kappa: f64) -> Result<u64> {
    phi(eps, b, &theta_constant(lambda, kappa)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticScalingReport {
    pub ok: bool,
    pub phi_eps: u64,
    pub phi_half_eps: u64,
}

/// Halving `eps` multiplies the constant-step rate by exactly 4. Requires
/// `b²/ε²` to be a positive integer (up to rounding).
pub fn quadratic_scaling_check(b: f64, lambda: f64, kappa: f64, eps: f64) -> Result<QuadraticScalingReport> {
    check_eps_b(eps, b)?;
    let r = (b / eps) * (b / eps);
    if r.round() < 1.0 || (r - r.round()).abs() > 1e-9 * r.round() {
        return Err(Error::InvalidParameter(format!("b^2/eps^2 = {r} is not a positive integer")));
    }
    let phi_eps = phi_krasnoselskii(eps, b, lambda, kappa)?;
    let phi_half_eps = phi_krasnoselskii(eps / 2.0, b, lambda, kappa)?;
    Ok(QuadraticScalingReport { ok: Some(phi_half_eps) == phi_eps.checked_mul(4), phi_eps, phi_half_eps })
}

/// Knobs for [`certify`].
#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    /// Steps run past `Φ`. `None` picks `Φ` when `Φ ≤ 10⁵`, else 0.
    pub horizon_extra: Option<u64>,
    pub seed: u64,
    /// Sampled pairs for the strictness check; 0 skips it.
    pub strict_samples: usize,
    /// Iteration budget when searching for approximate fixed points.
    pub afp_budget: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { horizon_extra: None, seed: 0, strict_samples: 10_000, afp_budget: 100_000 }
    }
}

pub fn default_horizon_extra(phi: u64) -> u64 {
    if phi <= EXTRA_HORIZON_LIMIT {
        phi
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub phi: u64,
    pub eps: f64,
    pub b: f64,
    /// First `n` with `rₙ < eps`, if reached within the horizon.
    pub empirical_idx: Option<u64>,
    /// `rₙ < eps` for every `n` in `[Φ, N]`.
    pub bound_holds: bool,
    /// `empirical_idx / Φ` when both exist and `empirical_idx ≤ Φ`.
    pub tightness: Option<f64>,
    pub checks: Vec<CheckOutcome>,
    #[serde(skip)]
    pub horizon: u64,
}

impl CertificationReport {
    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn all_ok(&self, kind: CheckKind) -> bool {
        self.checks.iter().filter(|c| c.kind == kind).all(|c| c.ok)
    }

    pub fn hypotheses_ok(&self) -> bool {
        self.all_ok(CheckKind::Hypothesis)
    }

    pub fn inequalities_ok(&self) -> bool {
        self.all_ok(CheckKind::Inequality)
    }

    /// Some residual lies within `1e-12` of `eps`, so the strict comparison
    /// may be decided by rounding.
    pub fn near_boundary(&self) -> bool {
        self.check(names::STRICT_MARGIN).is_some_and(|c| !c.ok)
    }
}

struct Monitors {
    descent: Vec<DescentMonitor>,
    growth: Option<GrowthMonitor>,
}

impl StepObserver for Monitors {
    fn observe(&mut self, step: &StepView<'_>) {
        self.descent.observe(step);
        if let Some(g) = &mut self.growth {
            g.observe(step);
        }
    }
}

/// Runs the iteration from `x0` for `Φ + extra` steps and checks the rate,
/// its hypotheses and every intermediate inequality.
///
/// Hypotheses are checked on a best-effort basis: the residual bound exactly,
/// the approximate fixed-point condition by search, the rate of divergence
/// up to `⌈b²/ε²⌉`. Points are never stored; the per-step inequalities are
/// evaluated while iterating.
pub fn certify(
    op: &Operator,
    s: &StepSchedule,
    rate: &DivergenceRate,
    x0: &Vector,
    b: f64,
    eps: f64,
    opts: &CertifyOptions,
) -> Result<CertificationReport> {
    check_eps_b(eps, b)?;
    iteration::ensure_compatible(op, s)?;
    x0.ensure_dim(op.dim())?;
    if !op.domain().contains(x0) {
        return Err(Error::OutsideDomain);
    }
    let phi = phi(eps, b, rate)?;
    let extra = opts.horizon_extra.unwrap_or_else(|| default_horizon_extra(phi));
    let horizon = phi.checked_add(extra).filter(|&h| h <= MAX_HORIZON).ok_or(Error::HorizonTooLarge(phi))?;

    let mut checks = Vec::new();
    let r0 = residual(op, x0)?;
    let mut hyp =
        CheckOutcome::new(names::HYPOTHESIS_RESIDUAL, CheckKind::Hypothesis, (r0 - b) / (1.0 + b), 0.0, Witness::None);
    hyp.ok = r0 <= b;
    checks.push(hyp);

    let mut anchor = None;
    let mut missing = None;
    for delta in APPROX_FIXED_POINT_DELTAS {
        match approx_fixed_point(op, x0, b, delta, opts.afp_budget) {
            Ok(y) => anchor = Some(y),
            Err(Error::NoApproxFixedPoint { .. }) => {
                missing = Some(delta);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let afp = match (&missing, &anchor) {
        (None, Some(y)) => CheckOutcome::new(
            names::HYPOTHESIS_APPROX_FIXED_POINTS,
            CheckKind::Hypothesis,
            0.0,
            0.0,
            Witness::Point { y: y.clone() },
        ),
        _ => CheckOutcome::failed(
            names::HYPOTHESIS_APPROX_FIXED_POINTS,
            CheckKind::Hypothesis,
            &Error::NoApproxFixedPoint { b, delta: missing.unwrap_or(1e-2), budget: opts.afp_budget },
        ),
    };
    checks.push(afp);
    checks.push(verify::theta_outcome(names::HYPOTHESIS_THETA, CheckKind::Hypothesis, s, rate, b, eps));

    let mut monitors = Monitors { descent: Vec::new(), growth: None };
    if let Some(p) = op.known_fixed_point() {
        monitors.descent.push(DescentMonitor::fixed_point(p));
    }
    if let Some(y) = &anchor {
        let ry = residual(op, y)?;
        let b_eff = b.max(r0).max(x0.dist(y));
        monitors.descent.push(DescentMonitor::step(y, ry));
        monitors.descent.push(DescentMonitor::bounded(names::STEP_DESCENT_C_RESIDUAL, y, ry, b_eff, ry));
        if ry <= 0.5 {
            monitors.descent.push(DescentMonitor::bounded(names::STEP_DESCENT_C_HALF, y, ry, b_eff, 0.5));
        }
        monitors.growth = Some(GrowthMonitor::new(y, b_eff));
    }
    let trace = iteration::run_mann_with(op, s, x0, horizon, RecordMode::ResidualsOnly, &mut monitors)?;
    checks.extend(monitors.descent.iter().map(DescentMonitor::finish));
    checks.extend(monitors.growth.as_ref().map(GrowthMonitor::finish));

    let residuals = trace.residuals();
    checks.push(verify::monotone_outcome(residuals));
    let delta = iteration::weighted_square_sum(residuals, trace.weights(), phi as usize);
    checks.push(verify::delta_outcome(delta, b));

    if opts.strict_samples > 0 {
        let sampler = BallSampler::for_operator(op, opts.seed);
        let rep = check_strict(op, op.kappa(), &sampler, opts.strict_samples, INEQUALITY_TOL)?;
        let (x, y) = rep.worst_pair;
        checks.push(CheckOutcome::new(
            names::STRICTNESS,
            CheckKind::Inequality,
            rep.worst_defect,
            INEQUALITY_TOL,
            Witness::Pair { x, y },
        ));
    }

    let near = residuals.iter().position(|r| (r - eps).abs() < BOUNDARY_BAND);
    let mut margin = CheckOutcome::new(
        names::STRICT_MARGIN,
        CheckKind::Diagnostic,
        residuals.iter().map(|r| -(r - eps).abs()).fold(f64::NEG_INFINITY, f64::max),
        -BOUNDARY_BAND,
        near.map_or(Witness::None, |i| Witness::Index { index: i as u64 }),
    );
    margin.ok = near.is_none();
    checks.push(margin);

    let tail = &residuals[phi as usize..];
    let bound_holds = tail.iter().all(|&r| r < eps);
    let empirical_idx = iteration::first_below(residuals, eps);
    let tightness = match empirical_idx {
        Some(i) if i <= phi && phi > 0 => Some(i as f64 / phi as f64),
        _ => None,
    };
    Ok(CertificationReport { phi, eps, b, empirical_idx, bound_holds, tightness, checks, horizon })
}
