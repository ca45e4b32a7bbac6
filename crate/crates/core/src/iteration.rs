//! The Mann iteration `xₙ₊₁ = λₙxₙ + (1−λₙ)Txₙ` and trace-level checks.
//!
//! The coefficient on `xₙ` is `λₙ`. With `κ < λₙ < 1` this is the
//! convention under which the descent weight `(λₙ−κ)(1−λₙ)` appears.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{dist_sq, Vector};
use crate::operators::Operator;
use crate::schedules::StepSchedule;

/// Largest horizon accepted by [`run_mann_with`].
pub const MAX_HORIZON: u64 = 1_000_000_000;

/// Whether a trace keeps the orbit or only the residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordMode {
    /// Points `xₙ` and images `Txₙ` are kept.
    Full,
    ResidualsOnly,
}

/// Orbit `x₀..x_N` of the Mann iteration with residuals and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    points: Option<Vec<Vector>>,
    images: Option<Vec<Vector>>,
    residuals: Vec<f64>,
    lambdas: Vec<f64>,
    weights: Vec<f64>,
    kappa: f64,
    pub operator_id: String,
    pub schedule_id: String,
}

impl IterationTrace {
    /// Assembles a trace from raw parts, e.g. a hand-edited one. Only the
    /// lengths are validated.
    pub fn from_parts(points: Option<Vec<Vector>>, residuals: Vec<f64>, lambdas: Vec<f64>, kappa: f64) -> Result<Self> {
        let len = residuals.len();
        if len == 0 || lambdas.len() + 1 < len {
            return Err(Error::InvalidParameter("trace needs N+1 residuals and at least N lambdas".into()));
        }
        if let Some(p) = &points {
            if p.len() != len {
                return Err(Error::InvalidParameter("points and residuals differ in length".into()));
            }
        }
        let weights = lambdas.iter().map(|l| (l - kappa) * (1.0 - l)).collect();
        Ok(IterationTrace {
            points,
            images: None,
            residuals,
            lambdas,
            weights,
            kappa,
            operator_id: "hand-built".into(),
            schedule_id: "hand-built".into(),
        })
    }

    /// The horizon `N`.
    pub fn horizon(&self) -> u64 {
        self.residuals.len() as u64 - 1
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn points(&self) -> Option<&[Vector]> {
        self.points.as_deref()
    }

    /// `Txₙ` for each recorded point.
    pub fn images(&self) -> Option<&[Vector]> {
        self.images.as_deref()
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Running sums `Σ_{k≤n} aₖrₖ²`.
    pub fn delta_partials(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.residuals
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| {
                acc += w * r * r;
                acc
            })
            .collect()
    }

    /// Writes `n,residual,weight,delta_partial[,x_0..x_{d-1}]` with 17
    /// significant digits per value.
    pub fn write_csv<W: Write>(&self, mut out: W, with_points: bool) -> io::Result<()> {
        let points = if with_points { self.points.as_deref() } else { None };
        let dim = points.and_then(|p| p.first()).map_or(0, Vector::dim);
        write!(out, "n,residual,weight,delta_partial")?;
        for i in 0..dim {
            write!(out, ",x_{i}")?;
        }
        writeln!(out)?;
        let partials = self.delta_partials();
        for (n, r) in self.residuals.iter().enumerate() {
            write!(out, "{n},{},", fmt17(*r))?;
            if let Some(w) = self.weights.get(n) {
                write!(out, "{}", fmt17(*w))?;
            }
            match partials.get(n) {
                Some(d) => write!(out, ",{}", fmt17(*d))?,
                None => write!(out, ",")?,
            }
            if let Some(p) = points {
                for c in p[n].as_slice() {
                    write!(out, ",{}", fmt17(*c))?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// One step of the iteration as seen by a [`StepObserver`].
pub struct StepView<'a> {
    pub n: u64,
    pub x: &'a [f64],
    pub tx: &'a [f64],
    pub residual: f64,
    pub lambda: f64,
    pub weight: f64,
    /// `xₙ₊₁`; `None` at the final index.
    pub next: Option<&'a [f64]>,
}

/// Streaming consumer of iteration steps, for checks on horizons too long
/// to store the orbit.
pub trait StepObserver {
    fn observe(&mut self, step: &StepView<'_>);
}

impl StepObserver for () {
    fn observe(&mut self, _: &StepView<'_>) {}
}

impl<A: StepObserver, B: StepObserver> StepObserver for (A, B) {
    fn observe(&mut self, step: &StepView<'_>) {
        self.0.observe(step);
        self.1.observe(step);
    }
}

impl<O: StepObserver> StepObserver for Vec<O> {
    fn observe(&mut self, step: &StepView<'_>) {
        for o in self {
            o.observe(step);
        }
    }
}

impl<O: StepObserver + ?Sized> StepObserver for &mut O {
    fn observe(&mut self, step: &StepView<'_>) {
        (**self).observe(step);
    }
}

fn check_lambda(lambda: f64, kappa: f64) -> Result<()> {
    if !(lambda > kappa && lambda < 1.0) {
        return Err(Error::StepSizeViolation { index: 0, lambda, kappa });
    }
    Ok(())
}

#[inline]
fn step_into(x: &[f64], tx: &[f64], lambda: f64, out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(x).zip(tx) {
        *o = lambda * a + (1.0 - lambda) * b;
    }
}

/// `λ·x + (1−λ)·Tx` for `κ < λ < 1`.
pub fn mann_step(x: &Vector, lambda: f64, op: &Operator) -> Result<Vector> {
    x.ensure_dim(op.dim())?;
    check_lambda(lambda, op.kappa())?;
    let tx = op.eval_raw(x.as_slice());
    let mut out = vec![0.0; op.dim()];
    step_into(x.as_slice(), tx.as_slice(), lambda, &mut out);
    Ok(Vector::from_raw(out))
}

pub(crate) fn ensure_compatible(op: &Operator, s: &StepSchedule) -> Result<()> {
    if (op.kappa() - s.kappa()).abs() > 1e-12 {
        return Err(Error::KappaMismatch { schedule: s.kappa(), operator: op.kappa() });
    }
    Ok(())
}

/// Runs `n` Mann steps from `x0`, keeping the full orbit.
pub fn run_mann(op: &Operator, s: &StepSchedule, x0: &Vector, n: u64) -> Result<IterationTrace> {
    run_mann_with(op, s, x0, n, RecordMode::Full, &mut ())
}

/// Runs `n` Mann steps from `x0`, feeding every index `0..=n` to `observer`.
///
/// `Txₙ` is evaluated once per index and used both for the residual and the
/// step.
pub fn run_mann_with<O: StepObserver + ?Sized>(
    op: &Operator,
    s: &StepSchedule,
    x0: &Vector,
    n: u64,
    mode: RecordMode,
    observer: &mut O,
) -> Result<IterationTrace> {
    ensure_compatible(op, s)?;
    x0.ensure_dim(op.dim())?;
    if !op.domain().contains(x0) {
        return Err(Error::OutsideDomain);
    }
    if n > MAX_HORIZON {
        return Err(Error::HorizonTooLarge(n));
    }
    let d = op.dim();
    let cap = (n as usize).saturating_add(1);
    let full = mode == RecordMode::Full;
    let mut points = full.then(|| Vec::with_capacity(cap));
    let mut images = full.then(|| Vec::with_capacity(cap));
    let mut residuals = Vec::with_capacity(cap);
    let mut lambdas = Vec::with_capacity(cap);
    let mut weights = Vec::with_capacity(cap);

    let mut x = x0.as_slice().to_vec();
    let mut tx = vec![0.0; d];
    let mut next = vec![0.0; d];
    for k in 0..=n {
        op.eval_into(&x, &mut tx);
        if let Some(i) = tx.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        let r = dist_sq(&x, &tx).sqrt();
        let lambda = s.lambda_at(k)?;
        let weight = s.weight_at(k)?;
        let last = k == n;
        if !last {
            step_into(&x, &tx, lambda, &mut next);
        }
        observer.observe(&StepView {
            n: k,
            x: &x,
            tx: &tx,
            residual: r,
            lambda,
            weight,
            next: (!last).then_some(next.as_slice()),
        });
        residuals.push(r);
        lambdas.push(lambda);
        weights.push(weight);
        if let (Some(p), Some(im)) = (points.as_mut(), images.as_mut()) {
            p.push(Vector::from_raw(x.clone()));
            im.push(Vector::from_raw(tx.clone()));
        }
        if !last {
            std::mem::swap(&mut x, &mut next);
        }
    }
    Ok(IterationTrace {
        points,
        images,
        residuals,
        lambdas,
        weights,
        kappa: s.kappa(),
        operator_id: op.label().to_string(),
        schedule_id: s.label(),
    })
}

/// Least `n ≤ N` with `rₙ < eps`.
pub fn empirical_index(trace: &IterationTrace, eps: f64) -> Option<u64> {
    first_below(&trace.residuals, eps)
}

pub(crate) fn first_below(residuals: &[f64], eps: f64) -> Option<u64> {
    residuals.iter().position(|r| *r < eps).map(|i| i as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub ok: bool,
    pub first_violation: Option<u64>,
    /// `max (rₙ₊₁ − rₙ)`.
    pub worst_increase: f64,
}

/// Tests `rₙ₊₁ ≤ rₙ + tol` for all `n < N`.
pub fn check_monotone_residuals(trace: &IterationTrace, tol: f64) -> MonotoneReport {
    monotone(&trace.residuals, tol)
}

pub(crate) fn monotone(residuals: &[f64], tol: f64) -> MonotoneReport {
    let mut first_violation = None;
    let mut worst = f64::NEG_INFINITY;
    for (n, w) in residuals.windows(2).enumerate() {
        let inc = w[1] - w[0];
        if inc > worst || inc.is_nan() {
            worst = inc;
        }
        if first_violation.is_none() && (inc.is_nan() || inc > tol) {
            first_violation = Some(n as u64);
        }
    }
    if residuals.len() < 2 {
        worst = 0.0;
    }
    MonotoneReport { ok: first_violation.is_none(), first_violation, worst_increase: worst }
}

/// `Σ_{n=0}^{m} aₙrₙ²`.
pub fn delta_sum(trace: &IterationTrace, m: u64) -> Result<f64> {
    if m > trace.horizon() || m as usize >= trace.weights.len() {
        return Err(Error::BeyondHorizon { index: m, horizon: trace.horizon() });
    }
    Ok(weighted_square_sum(&trace.residuals, &trace.weights, m as usize))
}

pub(crate) fn weighted_square_sum(residuals: &[f64], weights: &[f64], m: usize) -> f64 {
    let mut acc = 0.0;
    for (r, w) in residuals[..=m].iter().zip(&weights[..=m]) {
        acc += w * r * r;
    }
    acc
}
