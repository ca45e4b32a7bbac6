//! Numerical checks for each inequality used to derive the rate.
//!
//! Every check computes a signed defect `LHS − RHS` (nonpositive when the
//! inequality holds) and normalises it by `1 + Σ|terms|`, so tolerances are
//! relative to the magnitudes involved. Equality cases show up as defects
//! near zero rather than comfortably negative, which makes silent tolerance
//! inflation visible.
//!
//! Checks come in three shapes:
//! * point-level functions returning a raw defect,
//! * [`StepObserver`] monitors that run alongside the iteration and never
//!   need the orbit in memory,
//! * trace-level functions and [`run_full_suite`], which aggregate into
//!   [`CheckOutcome`]s.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{dist_sq, identity_defect_convex, identity_defect_sum, Vector};
use crate::iteration::{self, IterationTrace, StepObserver, StepView};
use crate::operators::{approx_fixed_point, strictness_terms, Operator, PointSampler};
use crate::par;
use crate::rates;
use crate::schedules::{verify_theta, DivergenceRate, StepSchedule};

/// Check names, as they appear in reports.
pub mod names {
    pub const NORM_IDENTITY_SUM: &str = "norm-identity-sum";
    pub const NORM_IDENTITY_CONVEX: &str = "norm-identity-convex";
    pub const STRICTNESS: &str = "strictness";
    pub const NONEXPANSIVE: &str = "nonexpansive";
    pub const PAIR_BOUND: &str = "pair-bound";
    pub const STEP_DESCENT: &str = "step-descent";
    pub const STEP_DESCENT_C_HALF: &str = "step-descent-bounded-c-half";
    pub const STEP_DESCENT_C_RESIDUAL: &str = "step-descent-bounded-c-residual";
    pub const GROWTH_BOUNDS: &str = "growth-bounds";
    pub const FIXED_POINT_DESCENT: &str = "fixed-point-descent";
    pub const RESIDUAL_MONOTONE: &str = "residual-monotone";
    pub const DELTA_CLAIM: &str = "delta-claim";
    pub const THETA_WITNESS: &str = "theta-witness";
    pub const HYPOTHESIS_RESIDUAL: &str = "hypothesis-residual-bound";
    pub const HYPOTHESIS_APPROX_FIXED_POINTS: &str = "hypothesis-approx-fixed-points";
    pub const HYPOTHESIS_THETA: &str = "hypothesis-theta";
    pub const STRICT_MARGIN: &str = "strict-margin";
}

/// Relative tolerance for inequality checks.
pub const INEQUALITY_TOL: f64 = 1e-9;
/// Relative tolerance for the norm identities and nonexpansiveness.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Absolute slack for residual monotonicity.
pub const MONOTONE_TOL: f64 = 1e-10;
/// Relative slack in `Δ ≤ b²`.
pub const DELTA_TOL: f64 = 1e-8;
/// Slack in the partial-sum test of a rate of divergence.
pub const THETA_TOL: f64 = 1e-9;
/// Distance to `eps` below which a residual counts as on the boundary.
pub const BOUNDARY_BAND: f64 = 1e-12;
/// Trace length used by [`run_full_suite`] when none is given.
pub const DEFAULT_SUITE_HORIZON: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// A hypothesis of the rate theorem, checked best-effort.
    Hypothesis,
    /// An inequality that must hold for a genuine strict pseudo-contraction.
    Inequality,
    /// Informational; never a failure of the run.
    Diagnostic,
}

/// Where the worst defect of a check was found.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Witness {
    None,
    Index { index: u64 },
    Pair { x: Vector, y: Vector },
    Point { y: Vector },
    Sample { sample: usize, index: Option<u64> },
}

/// Result of one named check. `ok ⇔ worst_defect ≤ tolerance`, unless an
/// error prevented the check from running.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub kind: CheckKind,
    pub ok: bool,
    pub worst_defect: f64,
    pub tolerance: f64,
    pub witness: Witness,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckOutcome {
    pub fn new(name: &str, kind: CheckKind, worst_defect: f64, tolerance: f64, witness: Witness) -> Self {
        CheckOutcome {
            name: name.to_string(),
            kind,
            ok: worst_defect <= tolerance,
            worst_defect,
            tolerance,
            witness,
            error: None,
        }
    }

    pub fn failed(name: &str, kind: CheckKind, err: &Error) -> Self {
        CheckOutcome {
            name: name.to_string(),
            kind,
            ok: false,
            worst_defect: f64::NAN,
            tolerance: 0.0,
            witness: Witness::None,
            error: Some(err.to_string()),
        }
    }
}

// ---- point-level defects ---------------------------------------------------

/// `‖Tz−y‖² − (‖z−y‖² + κ‖z−Tz‖² + (κ+1)‖y−Ty‖² + 2‖z−Ty‖‖y−Ty‖)`.
pub fn check_lemma_tzy(op: &Operator, kappa: f64, z: &Vector, y: &Vector) -> Result<f64> {
    z.ensure_dim(op.dim())?;
    y.ensure_dim(op.dim())?;
    Ok(pair_bound_terms(op, kappa, z, y).0)
}

fn pair_bound_terms(op: &Operator, kappa: f64, z: &Vector, y: &Vector) -> (f64, f64) {
    let tz = op.eval_raw(z.as_slice());
    let ty = op.eval_raw(y.as_slice());
    let lhs = tz.dist_sq(y);
    let ry = y.dist(&ty);
    let terms = [z.dist_sq(y), kappa * z.dist_sq(&tz), (kappa + 1.0) * ry * ry, 2.0 * z.dist(&ty) * ry];
    let rhs: f64 = terms.iter().sum();
    (lhs - rhs, lhs + rhs)
}

/// `‖xₙ₊₁−y‖² − (‖xₙ−y‖² − aₙrₙ² + 2‖y−Ty‖(‖xₙ−y‖ + 2‖y−Ty‖))`.
pub fn check_lemma_step(op: &Operator, s: &StepSchedule, trace: &IterationTrace, y: &Vector, n: u64) -> Result<f64> {
    let (x, next, r) = step_parts(trace, n)?;
    y.ensure_dim(op.dim())?;
    let ry = y.dist(&op.eval_raw(y.as_slice()));
    let w = s.weight_at(n)?;
    let dn = x.dist(y);
    Ok(next.dist_sq(y) - (dn * dn - w * r * r + 2.0 * ry * (dn + 2.0 * ry)))
}

/// The growth-bounded form of [`check_lemma_step`]:
/// `‖xₙ₊₁−y‖² − (‖xₙ−y‖² − aₙrₙ² + 2((n+1)b + 2c)‖y−Ty‖)`.
///
/// Requires `c ≥ ‖y−Ty‖` and `b ≥ max(‖x₀−Tx₀‖, ‖x₀−y‖)`.
pub fn check_lemma_step_bounded(
    op: &Operator,
    s: &StepSchedule,
    trace: &IterationTrace,
    y: &Vector,
    n: u64,
    b: f64,
    c: f64,
) -> Result<f64> {
    let (x, next, r) = step_parts(trace, n)?;
    y.ensure_dim(op.dim())?;
    let ry = y.dist(&op.eval_raw(y.as_slice()));
    if c < ry - 1e-12 * (1.0 + ry) {
        return Err(Error::InvalidParameter(format!("c={c} below residual {ry} of y")));
    }
    ensure_growth_radius(trace, y, b)?;
    let w = s.weight_at(n)?;
    let extra = 2.0 * ((n as f64 + 1.0) * b + 2.0 * c) * ry;
    Ok(next.dist_sq(y) - (x.dist_sq(y) - w * r * r + extra))
}

fn step_parts(trace: &IterationTrace, n: u64) -> Result<(&Vector, &Vector, f64)> {
    let points = trace.points().ok_or(Error::PointsNotRecorded)?;
    if n >= trace.horizon() {
        return Err(Error::BeyondHorizon { index: n, horizon: trace.horizon() });
    }
    let n = n as usize;
    Ok((&points[n], &points[n + 1], trace.residuals()[n]))
}

fn ensure_growth_radius(trace: &IterationTrace, y: &Vector, b: f64) -> Result<()> {
    let points = trace.points().ok_or(Error::PointsNotRecorded)?;
    let required = trace.residuals()[0].max(points[0].dist(y));
    if b < required * (1.0 - 1e-12) {
        return Err(Error::RadiusTooSmall { b, required });
    }
    Ok(())
}

// ---- streaming monitors ----------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Worst {
    value: f64,
    index: u64,
}

impl Default for Worst {
    fn default() -> Self {
        Worst { value: f64::NEG_INFINITY, index: 0 }
    }
}

impl Worst {
    fn offer(&mut self, value: f64, index: u64) {
        if value > self.value || (value.is_nan() && !self.value.is_nan()) {
            self.value = value;
            self.index = index;
        }
    }

    fn outcome(&self, name: &str, tol: f64) -> CheckOutcome {
        if self.value == f64::NEG_INFINITY {
            return CheckOutcome::new(name, CheckKind::Inequality, 0.0, tol, Witness::None);
        }
        CheckOutcome::new(name, CheckKind::Inequality, self.value, tol, Witness::Index { index: self.index })
    }
}

#[derive(Debug, Clone, Copy)]
enum DescentForm {
    FixedPoint,
    Plain,
    Bounded { b: f64, c: f64 },
}

/// Streams one of the per-step descent inequalities against a reference
/// point `y`.
#[derive(Debug, Clone)]
pub struct DescentMonitor {
    name: &'static str,
    y: Vec<f64>,
    ry: f64,
    form: DescentForm,
    worst: Worst,
}

impl DescentMonitor {
    /// `‖xₙ₊₁−p‖² ≤ ‖xₙ−p‖² − aₙrₙ²` for a fixed point `p`.
    pub fn fixed_point(p: &Vector) -> Self {
        Self::with_form(names::FIXED_POINT_DESCENT, p, 0.0, DescentForm::FixedPoint)
    }

    /// The step inequality for an arbitrary `y` with residual `ry = ‖y−Ty‖`.
    pub fn step(y: &Vector, ry: f64) -> Self {
        Self::with_form(names::STEP_DESCENT, y, ry, DescentForm::Plain)
    }

    /// The growth-bounded step inequality with parameters `b` and `c ≥ ry`.
    pub fn bounded(name: &'static str, y: &Vector, ry: f64, b: f64, c: f64) -> Self {
        Self::with_form(name, y, ry, DescentForm::Bounded { b, c })
    }

    fn with_form(name: &'static str, y: &Vector, ry: f64, form: DescentForm) -> Self {
        DescentMonitor { name, y: y.as_slice().to_vec(), ry, form, worst: Worst::default() }
    }

    /// Raw and normalised defect at one step.
    fn defect(&self, n: u64, x: &[f64], next: &[f64], weight: f64, residual: f64) -> (f64, f64) {
        let dn_sq = dist_sq(x, &self.y);
        let dn1_sq = dist_sq(next, &self.y);
        let descent = weight * residual * residual;
        let extra = match self.form {
            DescentForm::FixedPoint => 0.0,
            DescentForm::Plain => 2.0 * self.ry * (dn_sq.sqrt() + 2.0 * self.ry),
            DescentForm::Bounded { b, c } => 2.0 * ((n as f64 + 1.0) * b + 2.0 * c) * self.ry,
        };
        let raw = dn1_sq - (dn_sq - descent + extra);
        (raw, raw / (1.0 + dn1_sq + dn_sq + descent + extra))
    }

    pub fn finish(&self) -> CheckOutcome {
        self.worst.outcome(self.name, INEQUALITY_TOL)
    }
}

impl StepObserver for DescentMonitor {
    fn observe(&mut self, step: &StepView<'_>) {
        if let Some(next) = step.next {
            let (_, scaled) = self.defect(step.n, step.x, next, step.weight, step.residual);
            self.worst.offer(scaled, step.n);
        }
    }
}

/// Streams `‖xₙ−y‖ ≤ (n+1)b` and `‖Txₙ−y‖ ≤ (n+2)b`.
#[derive(Debug, Clone)]
pub struct GrowthMonitor {
    y: Vec<f64>,
    b: f64,
    worst: Worst,
}

impl GrowthMonitor {
    pub fn new(y: &Vector, b: f64) -> Self {
        GrowthMonitor { y: y.as_slice().to_vec(), b, worst: Worst::default() }
    }

    pub fn finish(&self) -> CheckOutcome {
        self.worst.outcome(names::GROWTH_BOUNDS, INEQUALITY_TOL)
    }
}

impl StepObserver for GrowthMonitor {
    fn observe(&mut self, step: &StepView<'_>) {
        let k = step.n as f64;
        let scale = 1.0 + (k + 2.0) * self.b;
        let d1 = dist_sq(step.x, &self.y).sqrt() - (k + 1.0) * self.b;
        let d2 = dist_sq(step.tx, &self.y).sqrt() - (k + 2.0) * self.b;
        self.worst.offer(d1.max(d2) / scale, step.n);
    }
}

/// Feeds a recorded trace through an observer. `Txₙ` comes from the trace
/// when recorded, otherwise from `op`.
pub fn replay<O: StepObserver + ?Sized>(op: &Operator, trace: &IterationTrace, observer: &mut O) -> Result<()> {
    let points = trace.points().ok_or(Error::PointsNotRecorded)?;
    let images = trace.images();
    let last = points.len() - 1;
    for (n, x) in points.iter().enumerate() {
        let computed;
        let tx = match images {
            Some(im) => im[n].as_slice(),
            None => {
                computed = op.eval_raw(x.as_slice());
                computed.as_slice()
            }
        };
        observer.observe(&StepView {
            n: n as u64,
            x: x.as_slice(),
            tx,
            residual: trace.residuals()[n],
            lambda: trace.lambdas().get(n).copied().unwrap_or(f64::NAN),
            weight: trace.weights().get(n).copied().unwrap_or(f64::NAN),
            next: (n < last).then(|| points[n + 1].as_slice()),
        });
    }
    Ok(())
}

// ---- trace-level checks ----------------------------------------------------

/// The fixed-point descent inequality along a trace; `p` must be a fixed
/// point of `op`.
pub fn check_fixed_point_descent(op: &Operator, trace: &IterationTrace, p: &Vector) -> Result<CheckOutcome> {
    p.ensure_dim(op.dim())?;
    let r = p.dist(&op.eval_raw(p.as_slice()));
    if r > 1e-12 * (1.0 + p.norm()) {
        return Err(Error::NotAFixedPoint(r));
    }
    let mut m = DescentMonitor::fixed_point(p);
    replay(op, trace, &mut m)?;
    Ok(m.finish())
}

/// The growth bounds along a trace. Requires `b ≥ max(‖x₀−Tx₀‖, ‖x₀−y‖)`.
pub fn check_growth_bounds(op: &Operator, trace: &IterationTrace, y: &Vector, b: f64) -> Result<CheckOutcome> {
    y.ensure_dim(op.dim())?;
    ensure_growth_radius(trace, y, b)?;
    let mut m = GrowthMonitor::new(y, b);
    replay(op, trace, &mut m)?;
    Ok(m.finish())
}

/// `Δ = Σ_{n≤m} aₙrₙ² ≤ b² + 1e-8·(1+b²)`.
pub fn check_delta_claim(trace: &IterationTrace, m: u64, b: f64) -> Result<CheckOutcome> {
    let delta = iteration::delta_sum(trace, m)?;
    Ok(delta_outcome(delta, b))
}

pub(crate) fn delta_outcome(delta: f64, b: f64) -> CheckOutcome {
    let b2 = b * b;
    CheckOutcome::new(names::DELTA_CLAIM, CheckKind::Inequality, (delta - b2) / (1.0 + b2), DELTA_TOL, Witness::None)
}

/// Residual monotonicity with slack [`MONOTONE_TOL`] as a check outcome.
pub fn monotone_outcome(residuals: &[f64]) -> CheckOutcome {
    let rep = iteration::monotone(residuals, MONOTONE_TOL);
    let witness = rep.first_violation.map_or(Witness::None, |index| Witness::Index { index });
    let mut out =
        CheckOutcome::new(names::RESIDUAL_MONOTONE, CheckKind::Inequality, rep.worst_increase, MONOTONE_TOL, witness);
    out.ok = rep.ok;
    out
}

// ---- full suite ------------------------------------------------------------

/// Inputs for [`run_full_suite`].
pub struct SuiteConfig<'a> {
    pub x0: Vector,
    pub b: f64,
    pub eps: f64,
    pub rate: DivergenceRate,
    pub sampler: &'a dyn PointSampler,
    pub n_samples: usize,
    /// Trace length; defaults to `min(Φ, 256)`.
    pub horizon: Option<u64>,
    /// Seed for the convex weights `t` of the norm identity samples.
    pub seed: u64,
}

fn worst_of(name: &str, kind: CheckKind, scaled: &[f64], tol: f64, witness: impl Fn(usize) -> Witness) -> CheckOutcome {
    let (i, worst) = par::argmax(scaled);
    if scaled.is_empty() {
        return CheckOutcome::new(name, kind, 0.0, tol, Witness::None);
    }
    CheckOutcome::new(name, kind, worst, tol, witness(i))
}

/// Runs every check on one configuration. Deterministic for a given sampler
/// and seed; sample-level work is spread over the rayon pool when the
/// `parallel` feature is on.
pub fn run_full_suite(op: &Operator, s: &StepSchedule, cfg: &SuiteConfig<'_>) -> Result<Vec<CheckOutcome>> {
    if cfg.n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    iteration::ensure_compatible(op, s)?;
    if cfg.sampler.dim() != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), found: cfg.sampler.dim() });
    }
    let kappa = op.kappa();
    let pairs = cfg.sampler.pairs(cfg.n_samples);
    if pairs.iter().any(|(x, y)| !op.domain().contains(x) || !op.domain().contains(y)) {
        return Err(Error::OutsideDomain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ts: Vec<f64> = (0..cfg.n_samples).map(|_| rng.gen::<f64>()).collect();
    let pair_witness = |i: usize| Witness::Pair { x: pairs[i].0.clone(), y: pairs[i].1.clone() };
    let mut out = Vec::new();

    let ident = par::map_range(pairs.len(), |i| {
        let (x, y) = &pairs[i];
        let scale = 1.0 + x.norm_sq() + y.norm_sq();
        let sum = identity_defect_sum(x, y).map_or(f64::NAN, f64::abs);
        let convex = identity_defect_convex(ts[i], x, y).map_or(f64::NAN, f64::abs);
        (sum / scale, convex / scale)
    });
    let (sums, convexes): (Vec<f64>, Vec<f64>) = ident.into_iter().unzip();
    out.push(worst_of(names::NORM_IDENTITY_SUM, CheckKind::Inequality, &sums, IDENTITY_TOL, pair_witness));
    out.push(worst_of(names::NORM_IDENTITY_CONVEX, CheckKind::Inequality, &convexes, IDENTITY_TOL, pair_witness));

    let strict =
        par::map_slice(&pairs, |(x, y)| strictness_terms(op, kappa, x, y).0 / (1.0 + x.norm_sq() + y.norm_sq()));
    out.push(worst_of(names::STRICTNESS, CheckKind::Inequality, &strict, INEQUALITY_TOL, pair_witness));

    if kappa == 0.0 {
        let nonexp = par::map_slice(&pairs, |(x, y)| {
            let txy = op.eval_raw(x.as_slice()).dist(&op.eval_raw(y.as_slice()));
            let xy = x.dist(y);
            (txy - xy) / (1.0 + txy + xy)
        });
        out.push(worst_of(names::NONEXPANSIVE, CheckKind::Inequality, &nonexp, IDENTITY_TOL, pair_witness));
    }

    let pair = par::map_slice(&pairs, |(z, y)| {
        let (d, mag) = pair_bound_terms(op, kappa, z, y);
        d / (1.0 + mag)
    });
    out.push(worst_of(names::PAIR_BOUND, CheckKind::Inequality, &pair, INEQUALITY_TOL, pair_witness));

    // Trace-based checks.
    let phi = rates::phi(cfg.eps, cfg.b, &cfg.rate);
    let horizon = cfg.horizon.unwrap_or_else(|| match &phi {
        Ok(p) => (*p).clamp(1, DEFAULT_SUITE_HORIZON),
        Err(_) => DEFAULT_SUITE_HORIZON,
    });
    let trace = iteration::run_mann(op, s, &cfg.x0, horizon)?;
    let points = trace.points().expect("full trace");
    let r0 = trace.residuals()[0];
    let x0 = &cfg.x0;
    let ys: Vec<&Vector> = pairs.iter().map(|(_, y)| y).collect();
    let y_res: Vec<f64> = par::map_slice(&ys, |y| y.dist(&op.eval_raw(y.as_slice())));
    let sample_witness = |i: usize, n: u64| Witness::Sample { sample: i, index: Some(n) };

    let steps = par::map_range(ys.len(), |i| {
        let n = (i as u64) % horizon;
        let m = DescentMonitor::step(ys[i], y_res[i]);
        let k = n as usize;
        m.defect(n, points[k].as_slice(), points[k + 1].as_slice(), trace.weights()[k], trace.residuals()[k]).1
    });
    out.push(worst_of(names::STEP_DESCENT, CheckKind::Inequality, &steps, INEQUALITY_TOL, |i| {
        sample_witness(i, (i as u64) % horizon)
    }));

    // Growth and bounded descent: each sampled y against the whole trace.
    let along = |mut obs: Box<dyn FnMut(&StepView<'_>) + '_>| {
        for n in 0..=horizon as usize {
            let view = StepView {
                n: n as u64,
                x: points[n].as_slice(),
                tx: trace.images().expect("full trace")[n].as_slice(),
                residual: trace.residuals()[n],
                lambda: trace.lambdas()[n],
                weight: trace.weights()[n],
                next: (n < horizon as usize).then(|| points[n + 1].as_slice()),
            };
            obs(&view);
        }
    };
    let growth_and_bounded = par::map_range(ys.len(), |i| {
        let y = ys[i];
        let b = r0.max(x0.dist(y));
        let mut g = GrowthMonitor::new(y, b);
        let mut d = DescentMonitor::bounded(names::STEP_DESCENT_C_RESIDUAL, y, y_res[i], b, y_res[i]);
        along(Box::new(|v| {
            g.observe(v);
            d.observe(v);
        }));
        ((g.worst.value, g.worst.index), (d.worst.value, d.worst.index))
    });
    let (g, d): (Vec<_>, Vec<_>) = growth_and_bounded.into_iter().unzip();
    let gv: Vec<f64> = g.iter().map(|p| p.0).collect();
    out.push(worst_of(names::GROWTH_BOUNDS, CheckKind::Inequality, &gv, INEQUALITY_TOL, |i| sample_witness(i, g[i].1)));

    // c = 1/2 needs reference points with residual at most 1/2: pull the
    // samples toward an anchor near the fixed-point set.
    let anchor = op.known_fixed_point().cloned().or_else(|| approx_fixed_point(op, x0, cfg.b, 0.25, 100_000).ok());
    match anchor {
        Some(a) => {
            let half = par::map_range(ys.len(), |i| {
                let y = shrink_toward(op, &a, ys[i], 0.5);
                let ry = y.dist(&op.eval_raw(y.as_slice()));
                let b = r0.max(x0.dist(&y));
                let mut m = DescentMonitor::bounded(names::STEP_DESCENT_C_HALF, &y, ry, b, 0.5);
                along(Box::new(|v| m.observe(v)));
                (m.worst.value, m.worst.index)
            });
            let hv: Vec<f64> = half.iter().map(|p| p.0).collect();
            out.push(worst_of(names::STEP_DESCENT_C_HALF, CheckKind::Inequality, &hv, INEQUALITY_TOL, |i| {
                sample_witness(i, half[i].1)
            }));
        }
        None => out.push(CheckOutcome::failed(
            names::STEP_DESCENT_C_HALF,
            CheckKind::Inequality,
            &Error::NoApproxFixedPoint { b: cfg.b, delta: 0.25, budget: 100_000 },
        )),
    }
    let dv: Vec<f64> = d.iter().map(|p| p.0).collect();
    out.push(worst_of(names::STEP_DESCENT_C_RESIDUAL, CheckKind::Inequality, &dv, INEQUALITY_TOL, |i| {
        sample_witness(i, d[i].1)
    }));

    if let Some(p) = op.known_fixed_point() {
        out.push(check_fixed_point_descent(op, &trace, p)?);
    }
    out.push(monotone_outcome(trace.residuals()));
    match &phi {
        Ok(p) => out.push(check_delta_claim(&trace, (*p).min(horizon), cfg.b)?),
        Err(e) => out.push(CheckOutcome::failed(names::DELTA_CLAIM, CheckKind::Inequality, e)),
    }
    out.push(theta_outcome(names::THETA_WITNESS, CheckKind::Inequality, s, &cfg.rate, cfg.b, cfg.eps));
    Ok(out)
}

/// Moves `y` toward `anchor` by halving until `‖y−Ty‖ ≤ limit`.
fn shrink_toward(op: &Operator, anchor: &Vector, y: &Vector, limit: f64) -> Vector {
    let mut t = 1.0;
    let diff = y - anchor;
    for _ in 0..80 {
        let cand = anchor + &diff.scaled(t);
        if cand.dist(&op.eval_raw(cand.as_slice())) <= limit {
            return cand;
        }
        t *= 0.5;
    }
    anchor.clone()
}

pub(crate) fn theta_outcome(
    name: &str,
    kind: CheckKind,
    s: &StepSchedule,
    rate: &DivergenceRate,
    b: f64,
    eps: f64,
) -> CheckOutcome {
    let result = rates::ratio_ceil(b, eps).and_then(|k| verify_theta(s, rate, k, THETA_TOL));
    match result {
        Ok(rep) => match rep.first_failure {
            None => CheckOutcome::new(name, kind, 0.0, 0.0, Witness::None),
            Some(f) => {
                let shortfall = f.n as f64 - f.partial_sum;
                let mut out = CheckOutcome::new(name, kind, shortfall, THETA_TOL, Witness::Index { index: f.n });
                out.ok = false;
                out
            }
        },
        Err(e) => CheckOutcome::failed(name, kind, &e),
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::iteration::run_mann;
    use crate::operators::{build_operator, BallSampler, OperatorSpec};
    use crate::schedules::theta_constant;

    fn v(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    fn scaling() -> Operator {
        build_operator(&OperatorSpec::Scaling { a: -2.0, dim: 1 }).unwrap()
    }

    fn quarter_turn() -> Operator {
        build_operator(&OperatorSpec::Rotation { angle: FRAC_PI_2, plane: [0, 1], dim: 2 }).unwrap()
    }

    #[test]
    fn pair_bound_examples() {
        let op = scaling();
        let k = op.kappa();
        // y fixed: reduces to the strictness inequality, equality for aI
        assert!(check_lemma_tzy(&op, k, &v(&[1.0]), &v(&[0.0])).unwrap() <= 1e-12);
        // Oracle: Tz=-2, Ty=-1, ‖Tz−y‖²=6.25; RHS = 0.25 + (1/3)·9 + (4/3)·2.25 + 2·2·1.5 = 12.25
        let d = check_lemma_tzy(&op, k, &v(&[1.0]), &v(&[0.5])).unwrap();
        assert_abs_diff_eq!(d, 6.25 - 12.25, epsilon = 1e-12);
        assert!(check_lemma_tzy(&op, k, &v(&[0.7]), &v(&[0.7])).unwrap() <= 0.0);
    }

    #[test]
    fn step_inequality_examples() {
        let op = scaling();
        let s = StepSchedule::constant(2.0 / 3.0, op.kappa()).unwrap();
        let t = run_mann(&op, &s, &v(&[1.0]), 3).unwrap();
        assert!(check_lemma_step(&op, &s, &t, &v(&[0.0]), 0).unwrap() <= 1e-12);
        // Oracle: x0=1, x1=0, y=0.1, Ty=-0.2, ‖y−Ty‖=0.3, a0 r0² = 1;
        // LHS 0.01, RHS 0.81 − 1 + 2·0.3·(0.9 + 0.6) = 0.71
        let d = check_lemma_step(&op, &s, &t, &v(&[0.1]), 0).unwrap();
        assert_abs_diff_eq!(d, 0.01 - 0.71, epsilon = 1e-12);
        assert!(matches!(check_lemma_step(&op, &s, &t, &v(&[0.1]), 3), Err(Error::BeyondHorizon { .. })));
        let fixed = run_mann(&op, &s, &v(&[0.0]), 2).unwrap();
        assert_eq!(check_lemma_step(&op, &s, &fixed, &v(&[0.0]), 1).unwrap(), 0.0);
    }

    #[test]
    fn fixed_point_descent_equality_anchors() {
        let op = scaling();
        let s = StepSchedule::constant(2.0 / 3.0, op.kappa()).unwrap();
        let t = run_mann(&op, &s, &v(&[1.0]), 4).unwrap();
        let out = check_fixed_point_descent(&op, &t, &v(&[0.0])).unwrap();
        assert!(out.ok);
        assert_abs_diff_eq!(out.worst_defect, 0.0, epsilon = 1e-12);

        let rot = quarter_turn();
        let s = StepSchedule::constant(0.5, 0.0).unwrap();
        let t = run_mann(&rot, &s, &v(&[1.0, 0.0]), 40).unwrap();
        let out = check_fixed_point_descent(&rot, &t, &Vector::zeros(2)).unwrap();
        assert!(out.ok);
        assert!(out.worst_defect.abs() <= 1e-10, "{out:?}");

        let at_p = run_mann(&rot, &s, &Vector::zeros(2), 5).unwrap();
        assert_eq!(check_fixed_point_descent(&rot, &at_p, &Vector::zeros(2)).unwrap().worst_defect, 0.0);
        assert!(matches!(check_fixed_point_descent(&rot, &t, &v(&[1.0, 0.0])), Err(Error::NotAFixedPoint(_))));
    }

    #[test]
    fn growth_examples() {
        let op = scaling();
        let s = StepSchedule::constant(2.0 / 3.0, op.kappa()).unwrap();
        let t = run_mann(&op, &s, &v(&[1.0]), 5).unwrap();
        assert!(check_growth_bounds(&op, &t, &v(&[0.0]), 3.0).unwrap().ok);
        assert!(matches!(check_growth_bounds(&op, &t, &v(&[0.0]), 1.0), Err(Error::RadiusTooSmall { .. })));
        let rot = quarter_turn();
        let s = StepSchedule::constant(0.5, 0.0).unwrap();
        let t = run_mann(&rot, &s, &v(&[1.0, 0.0]), 60).unwrap();
        assert!(check_growth_bounds(&rot, &t, &Vector::zeros(2), 2f64.sqrt()).unwrap().ok);
    }

    #[test]
    fn delta_claim_examples() {
        let op = scaling();
        let s = StepSchedule::constant(2.0 / 3.0, op.kappa()).unwrap();
        let t = run_mann(&op, &s, &v(&[1.0]), 5).unwrap();
        let out = check_delta_claim(&t, 5, 3.0).unwrap();
        assert!(out.ok);
        assert_abs_diff_eq!(out.worst_defect, (1.0 - 9.0) / 10.0, epsilon = 1e-14);

        // geometric series: Σ (1/4)·2·(1/2)ⁿ → 1 < b² = 2
        let rot = quarter_turn();
        let s = StepSchedule::constant(0.5, 0.0).unwrap();
        let t = run_mann(&rot, &s, &v(&[1.0, 0.0]), 80).unwrap();
        let delta = iteration::delta_sum(&t, 80).unwrap();
        assert_abs_diff_eq!(delta, 1.0, epsilon = 1e-12);
        assert!(check_delta_claim(&t, 80, 2f64.sqrt()).unwrap().ok);
    }

    #[test]
    fn bounded_step_requires_c_and_b() {
        let op = scaling();
        let s = StepSchedule::constant(2.0 / 3.0, op.kappa()).unwrap();
        let t = run_mann(&op, &s, &v(&[1.0]), 3).unwrap();
        let y = v(&[0.1]);
        assert!(check_lemma_step_bounded(&op, &s, &t, &y, 1, 3.0, 0.5).unwrap() <= 0.0);
        assert!(check_lemma_step_bounded(&op, &s, &t, &y, 1, 3.0, 0.3).unwrap() <= 0.0);
        assert!(check_lemma_step_bounded(&op, &s, &t, &y, 1, 3.0, 0.1).is_err());
        assert!(check_lemma_step_bounded(&op, &s, &t, &y, 1, 1.0, 0.5).is_err());
    }

    #[test]
    fn suite_passes_and_is_deterministic() {
        let op = quarter_turn();
        let s = StepSchedule::constant(0.5, 0.0).unwrap();
        let sampler = BallSampler::for_operator(&op, 11);
        let cfg = SuiteConfig {
            x0: v(&[1.0, 0.0]),
            b: 2f64.sqrt(),
            eps: 0.5,
            rate: theta_constant(0.5, 0.0).unwrap(),
            sampler: &sampler,
            n_samples: 500,
            horizon: None,
            seed: 5,
        };
        let a = run_full_suite(&op, &s, &cfg).unwrap();
        assert!(a.iter().all(|c| c.ok), "{a:#?}");
        assert_eq!(a, run_full_suite(&op, &s, &cfg).unwrap());
        assert!(a.iter().any(|c| c.name == names::NONEXPANSIVE));
    }

    #[test]
    fn suite_rejects_zero_samples() {
        let op = quarter_turn();
        let s = StepSchedule::constant(0.5, 0.0).unwrap();
        let sampler = BallSampler::for_operator(&op, 1);
        let cfg = SuiteConfig {
            x0: v(&[1.0, 0.0]),
            b: 2.0,
            eps: 0.5,
            rate: theta_constant(0.5, 0.0).unwrap(),
            sampler: &sampler,
            n_samples: 0,
            horizon: None,
            seed: 0,
        };
        assert!(run_full_suite(&op, &s, &cfg).is_err());
    }
}
