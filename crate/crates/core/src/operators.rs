//! Strict pseudo-contractions: construction, evaluation and the strictness
//! inequality `‖Tx−Ty‖² ≤ ‖x−y‖² + κ‖(x−Tx)−(y−Ty)‖²`.
//!
//! Operators are built from an [`OperatorSpec`] (the experiment catalog) or
//! wrapped around an arbitrary closure with [`Operator::custom`]. Each carries
//! the strictness constant `κ` it claims; [`check_strict`] tests that claim on
//! sampled pairs rather than trusting it.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{dist_sq, Vector};
use crate::par;

/// Catalog description of an operator, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    /// `x ↦ a·x`.
    Scaling { a: f64, dim: usize },
    /// Rotation by `angle` in the coordinate plane `plane`, identity elsewhere.
    Rotation {
        angle: f64,
        #[serde(default = "default_plane")]
        plane: [usize; 2],
        dim: usize,
    },
    /// `x ↦ A·x + c`. `kappa` is required when no closed form is available.
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
    },
    /// `P_B ∘ T ∘ P_B` for the ball `B(center, radius)`; a self-map of `B`.
    Projected {
        inner: Box<OperatorSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
    },
}

fn default_plane() -> [usize; 2] {
    [0, 1]
}

impl OperatorSpec {
    pub fn dim(&self) -> usize {
        match self {
            OperatorSpec::Scaling { dim, .. } | OperatorSpec::Rotation { dim, .. } => *dim,
            OperatorSpec::Affine { offset, .. } => offset.len(),
            OperatorSpec::Projected { inner, .. } => inner.dim(),
        }
    }

    /// Re-targets the spec to another ambient dimension where that is meaningful.
    pub fn with_dim(&self, new_dim: usize) -> Result<OperatorSpec> {
        let mut spec = self.clone();
        match &mut spec {
            OperatorSpec::Scaling { dim, .. } | OperatorSpec::Rotation { dim, .. } => *dim = new_dim,
            OperatorSpec::Affine { offset, .. } => {
                if offset.len() != new_dim {
                    return Err(Error::DimensionMismatch { expected: offset.len(), found: new_dim });
                }
            }
            OperatorSpec::Projected { inner, center, .. } => {
                **inner = inner.with_dim(new_dim)?;
                if let Some(c) = center {
                    if c.len() != new_dim {
                        return Err(Error::DimensionMismatch { expected: c.len(), found: new_dim });
                    }
                }
            }
        }
        Ok(spec)
    }
}

/// Where an operator lives. Ball domains are enforced by metric projection.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    FullSpace,
    Ball { center: Vector, radius: f64 },
}

impl Domain {
    pub fn contains(&self, x: &Vector) -> bool {
        match self {
            Domain::FullSpace => true,
            Domain::Ball { center, radius } => x.dist(center) <= radius * (1.0 + 1e-12) + 1e-12,
        }
    }

    pub fn project(&self, x: &Vector) -> Vector {
        let mut out = x.as_slice().to_vec();
        self.project_in_place(&mut out);
        Vector::from_raw(out)
    }

    fn project_in_place(&self, x: &mut [f64]) {
        if let Domain::Ball { center, radius } = self {
            project_onto_ball(x, center.as_slice(), *radius);
        }
    }
}

fn project_onto_ball(x: &mut [f64], center: &[f64], radius: f64) {
    let d = dist_sq(x, center).sqrt();
    if d > radius {
        let s = radius / d;
        for (xi, ci) in x.iter_mut().zip(center) {
            *xi = ci + (*xi - ci) * s;
        }
    }
}

type CustomFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum Map {
    Scaling(f64),
    Rotation { cos: f64, sin: f64, i: usize, j: usize },
    Affine { matrix: Vec<f64>, offset: Vec<f64> },
    Projected { inner: Box<Map>, center: Vec<f64>, radius: f64 },
    Custom(Arc<CustomFn>),
}

impl Map {
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Map::Scaling(a) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = a * xi;
                }
            }
            Map::Rotation { cos, sin, i, j } => {
                out.copy_from_slice(x);
                out[*i] = cos * x[*i] - sin * x[*j];
                out[*j] = sin * x[*i] + cos * x[*j];
            }
            Map::Affine { matrix, offset } => {
                let d = offset.len();
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &matrix[r * d..(r + 1) * d];
                    let mut acc = 0.0;
                    for (a, xi) in row.iter().zip(x) {
                        acc += a * xi;
                    }
                    *o = acc + offset[r];
                }
            }
            Map::Projected { inner, center, radius } => {
                let mut px = x.to_vec();
                project_onto_ball(&mut px, center, *radius);
                inner.eval_into(&px, out);
                project_onto_ball(out, center, *radius);
            }
            Map::Custom(f) => f(x, out),
        }
    }
}

/// A self-map `T` of a convex set with a claimed strictness constant `κ`.
#[derive(Clone)]
pub struct Operator {
    map: Map,
    dim: usize,
    kappa: f64,
    domain: Domain,
    known_fixed_point: Option<Vector>,
    label: String,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operator")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("kappa", &self.kappa)
            .field("domain", &self.domain)
            .field("known_fixed_point", &self.known_fixed_point)
            .finish()
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::KappaOutOfRange(kappa));
    }
    Ok(())
}

impl Operator {
    /// Wraps an arbitrary map. `f(x, out)` must write `T x` into `out`; it is
    /// called on points already projected onto `domain`.
    pub fn custom<F>(
        label: impl Into<String>,
        dim: usize,
        kappa: f64,
        domain: Domain,
        known_fixed_point: Option<Vector>,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        check_kappa(kappa)?;
        let map = match &domain {
            Domain::FullSpace => Map::Custom(Arc::new(f)),
            Domain::Ball { center, radius } => {
                center.ensure_dim(dim)?;
                Map::Projected {
                    inner: Box::new(Map::Custom(Arc::new(f))),
                    center: center.as_slice().to_vec(),
                    radius: *radius,
                }
            }
        };
        let mut op = Operator { map, dim, kappa, domain, known_fixed_point: None, label: label.into() };
        if let Some(p) = known_fixed_point {
            p.ensure_dim(dim)?;
            let r = op.residual_unchecked(p.as_slice());
            if r > 1e-12 * (1.0 + p.norm()) {
                return Err(Error::NotAFixedPoint(r));
            }
            op.known_fixed_point = Some(p);
        }
        Ok(op)
    }

    /// Replaces the claimed strictness constant. The claim is not validated
    /// against the map; use [`check_strict`] for that.
    pub fn with_claimed_kappa(mut self, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        self.kappa = kappa;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn known_fixed_point(&self) -> Option<&Vector> {
        self.known_fixed_point.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.map.eval_into(x, out);
    }

    pub(crate) fn eval_raw(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.dim];
        self.map.eval_into(x, &mut out);
        Vector::from_raw(out)
    }

    fn residual_unchecked(&self, x: &[f64]) -> f64 {
        let mut out = vec![0.0; self.dim];
        self.map.eval_into(x, &mut out);
        dist_sq(x, &out).sqrt()
    }
}

/// Builds a catalog operator with the smallest valid strictness constant.
pub fn build_operator(spec: &OperatorSpec) -> Result<Operator> {
    let (map, kappa, domain, fixed_point) = build_parts(spec)?;
    let dim = spec.dim();
    let mut op = Operator { map, dim, kappa, domain, known_fixed_point: None, label: label_for(spec) };
    if let Some(p) = fixed_point {
        // Rounding in the affine solve can leave a point that is only nearly fixed.
        if op.residual_unchecked(p.as_slice()) <= 1e-12 * (1.0 + p.norm()) {
            op.known_fixed_point = Some(p);
        }
    }
    Ok(op)
}

type Parts = (Map, f64, Domain, Option<Vector>);

fn build_parts(spec: &OperatorSpec) -> Result<Parts> {
    match spec {
        OperatorSpec::Scaling { a, dim } => {
            ensure_positive_dim(*dim)?;
            if !a.is_finite() {
                return Err(Error::InvalidParameter("scaling factor must be finite".into()));
            }
            Ok((Map::Scaling(*a), scaling_kappa(*a)?, Domain::FullSpace, Some(Vector::zeros(*dim))))
        }
        OperatorSpec::Rotation { angle, plane, dim } => {
            ensure_positive_dim(*dim)?;
            let [i, j] = *plane;
            if *dim < 2 || i == j || i >= *dim || j >= *dim {
                return Err(Error::InvalidParameter(format!("rotation plane {plane:?} invalid for dim {dim}")));
            }
            if !angle.is_finite() {
                return Err(Error::InvalidParameter("rotation angle must be finite".into()));
            }
            let (sin, cos) = angle.sin_cos();
            Ok((Map::Rotation { cos, sin, i, j }, 0.0, Domain::FullSpace, Some(Vector::zeros(*dim))))
        }
        OperatorSpec::Affine { matrix, offset, kappa } => {
            let d = offset.len();
            ensure_positive_dim(d)?;
            if matrix.len() != d || matrix.iter().any(|row| row.len() != d) {
                return Err(Error::InvalidParameter(format!("affine matrix must be {d}x{d}")));
            }
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            if flat.iter().chain(offset).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("affine parameters must be finite".into()));
            }
            let a = DMatrix::from_row_slice(d, d, &flat);
            let kappa = match kappa {
                Some(k) => {
                    check_kappa(*k)?;
                    *k
                }
                None => affine_kappa(&a)?,
            };
            let p = affine_fixed_point(&a, offset);
            Ok((Map::Affine { matrix: flat, offset: offset.clone() }, kappa, Domain::FullSpace, p))
        }
        OperatorSpec::Projected { inner, center, radius, kappa } => {
            let d = inner.dim();
            if !(radius.is_finite() && *radius > 0.0) {
                return Err(Error::InvalidParameter("ball radius must be positive and finite".into()));
            }
            let center = match center {
                Some(c) => {
                    let c = Vector::new(c.clone())?;
                    c.ensure_dim(d)?;
                    c
                }
                None => Vector::zeros(d),
            };
            let (inner_map, inner_kappa, _, inner_fp) = build_parts(inner)?;
            let kappa = match kappa {
                Some(k) => {
                    check_kappa(*k)?;
                    *k
                }
                None if inner_kappa == 0.0 => 0.0,
                // P∘(aI) with a ball centred at the origin keeps the constant of aI:
                // I − P(a·) = I + |a|·P_{r/|a|}, and firm nonexpansiveness of the
                // projection absorbs the cross terms.
                None if matches!(**inner, OperatorSpec::Scaling { .. }) && center.norm() == 0.0 => inner_kappa,
                None => {
                    return Err(Error::UnsupportedOperator(
                        "projected operator with kappa > 0 needs an explicit kappa".into(),
                    ))
                }
            };
            let fp = inner_fp.filter(|p| p.dist(&center) <= *radius);
            let map =
                Map::Projected { inner: Box::new(inner_map), center: center.as_slice().to_vec(), radius: *radius };
            Ok((map, kappa, Domain::Ball { center, radius: *radius }, fp))
        }
    }
}

fn ensure_positive_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dim must be positive".into()));
    }
    Ok(())
}

/// Minimal `κ` for `x ↦ a·x`: the equality case of the strictness
/// inequality for a linear map, `a² = 1 + κ(1−a)²`.
pub fn scaling_kappa(a: f64) -> Result<f64> {
    if a.abs() <= 1.0 {
        return Ok(0.0);
    }
    let kappa = (a * a - 1.0) / ((1.0 - a) * (1.0 - a));
    if kappa >= 1.0 {
        return Err(Error::KappaOutOfRange(kappa));
    }
    Ok(kappa)
}

/// Smallest `κ` with `‖Ad‖² ≤ ‖d‖² + κ‖(I−A)d‖²` for all `d`: the top
/// generalized eigenvalue of `(AᵀA − I, (I−A)ᵀ(I−A))`.
fn affine_kappa(a: &DMatrix<f64>) -> Result<f64> {
    let d = a.nrows();
    let spectral = a.clone().svd(false, false).singular_values.max();
    if spectral <= 1.0 + 1e-12 {
        return Ok(0.0);
    }
    let id = DMatrix::<f64>::identity(d, d);
    let i_minus_a = &id - a;
    let gram = i_minus_a.transpose() * &i_minus_a;
    let chol = gram.cholesky().ok_or_else(|| {
        Error::UnsupportedOperator("affine map with I - A singular and |A| > 1 needs an explicit kappa".into())
    })?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::UnsupportedOperator("affine kappa: ill-conditioned I - A".into()))?;
    let m = a.transpose() * a - &id;
    let reduced = &l_inv * m * l_inv.transpose();
    let sym = (&reduced + reduced.transpose()) * 0.5;
    let kappa = sym.symmetric_eigen().eigenvalues.max().max(0.0);
    if kappa >= 1.0 {
        return Err(Error::KappaOutOfRange(kappa));
    }
    Ok(kappa)
}

fn affine_fixed_point(a: &DMatrix<f64>, offset: &[f64]) -> Option<Vector> {
    let d = a.nrows();
    let i_minus_a = DMatrix::<f64>::identity(d, d) - a;
    let c = nalgebra::DVector::from_column_slice(offset);
    let p = i_minus_a.lu().solve(&c)?;
    Vector::new(p.iter().copied().collect()).ok()
}

fn label_for(spec: &OperatorSpec) -> String {
    match spec {
        OperatorSpec::Scaling { a, dim } => format!("scaling(a={a},dim={dim})"),
        OperatorSpec::Rotation { angle, plane, dim } => {
            format!("rotation(angle={angle},plane={}-{},dim={dim})", plane[0], plane[1])
        }
        OperatorSpec::Affine { offset, .. } => format!("affine(dim={})", offset.len()),
        OperatorSpec::Projected { inner, radius, .. } => {
            format!("projected({},radius={radius})", label_for(inner))
        }
    }
}

/// `T x`. Points of a ball-restricted operator are projected first.
pub fn evaluate(op: &Operator, x: &Vector) -> Result<Vector> {
    x.ensure_dim(op.dim)?;
    Ok(op.eval_raw(x.as_slice()))
}

/// `‖x − Tx‖`.
pub fn residual(op: &Operator, x: &Vector) -> Result<f64> {
    x.ensure_dim(op.dim)?;
    Ok(op.residual_unchecked(x.as_slice()))
}

/// Signed defect `‖Tx−Ty‖² − ‖x−y‖² − κ‖(x−Tx)−(y−Ty)‖²`; nonpositive iff
/// the strictness inequality holds at `(x, y)`.
pub fn strictness_defect(op: &Operator, kappa: f64, x: &Vector, y: &Vector) -> Result<f64> {
    x.ensure_dim(op.dim)?;
    y.ensure_dim(op.dim)?;
    Ok(strictness_terms(op, kappa, x, y).0)
}

/// Returns `(defect, magnitude)` where magnitude is the sum of the absolute
/// terms, for callers that normalise.
pub(crate) fn strictness_terms(op: &Operator, kappa: f64, x: &Vector, y: &Vector) -> (f64, f64) {
    let tx = op.eval_raw(x.as_slice());
    let ty = op.eval_raw(y.as_slice());
    let lhs = tx.dist_sq(&ty);
    let xy = x.dist_sq(y);
    let gx = x - &tx;
    let gy = y - &ty;
    let g = gx.dist_sq(&gy);
    (lhs - xy - kappa * g, lhs + xy + kappa * g)
}

/// Source of sample points for the sampled checks.
pub trait PointSampler: Sync {
    fn dim(&self) -> usize;

    /// Draws `count` points; the same sampler always returns the same points.
    fn points(&self, count: usize) -> Vec<Vector>;

    /// `count` pairs built from `2·count` consecutive points.
    fn pairs(&self, count: usize) -> Vec<(Vector, Vector)> {
        let mut pts = self.points(2 * count).into_iter();
        let mut out = Vec::with_capacity(count);
        while let (Some(x), Some(y)) = (pts.next(), pts.next()) {
            out.push((x, y));
        }
        out
    }
}

/// Uniform samples from a Euclidean ball, from a fixed seed.
#[derive(Debug, Clone)]
pub struct BallSampler {
    pub center: Vector,
    pub radius: f64,
    pub seed: u64,
}

impl BallSampler {
    /// Radius used when the operator is defined on the whole space.
    pub const DEFAULT_RADIUS: f64 = 10.0;

    pub fn new(center: Vector, radius: f64, seed: u64) -> Self {
        BallSampler { center, radius, seed }
    }

    /// Samples the operator's ball domain, or the radius-10 ball about the
    /// origin for full-space operators.
    pub fn for_operator(op: &Operator, seed: u64) -> Self {
        match op.domain() {
            Domain::FullSpace => BallSampler::new(Vector::zeros(op.dim()), Self::DEFAULT_RADIUS, seed),
            Domain::Ball { center, radius } => BallSampler::new(center.clone(), *radius, seed),
        }
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub(crate) fn draw(&self, rng: &mut ChaCha8Rng) -> Vector {
        let d = self.center.dim();
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: f64 = rng.gen();
        let r = self.radius * u.powf(1.0 / d as f64);
        let s = if n > 0.0 { r / n } else { 0.0 };
        for (v, c) in dir.iter_mut().zip(self.center.as_slice()) {
            *v = c + *v * s;
        }
        Vector::from_raw(dir)
    }
}

impl PointSampler for BallSampler {
    fn dim(&self) -> usize {
        self.center.dim()
    }

    fn points(&self, count: usize) -> Vec<Vector> {
        let mut rng = self.rng();
        (0..count).map(|_| self.draw(&mut rng)).collect()
    }
}

/// Outcome of a sampled strictness check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrictReport {
    pub holds: bool,
    pub worst_pair: (Vector, Vector),
    /// Largest `defect / (1 + ‖x‖² + ‖y‖²)` over the sample.
    pub worst_defect: f64,
}

/// Tests the strictness inequality with constant `kappa` on `n_samples`
/// sampled pairs. Holds iff every pair has `defect ≤ tol·(1+‖x‖²+‖y‖²)`.
pub fn check_strict(
    op: &Operator,
    kappa: f64,
    sampler: &dyn PointSampler,
    n_samples: usize,
    tol: f64,
) -> Result<StrictReport> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    if sampler.dim() != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), found: sampler.dim() });
    }
    let pairs = sampler.pairs(n_samples);
    if pairs.iter().any(|(x, y)| !op.domain().contains(x) || !op.domain().contains(y)) {
        return Err(Error::OutsideDomain);
    }
    let scaled = par::map_slice(&pairs, |(x, y)| {
        let (defect, _) = strictness_terms(op, kappa, x, y);
        defect / (1.0 + x.norm_sq() + y.norm_sq())
    });
    let (idx, worst) = par::argmax(&scaled);
    Ok(StrictReport { holds: worst <= tol, worst_pair: pairs[idx].clone(), worst_defect: worst })
}

/// Finds a point of `Fix_δ(T, x, b) = {y : ‖x−y‖ ≤ b, ‖y−Ty‖ < δ}`.
///
/// Tries the known fixed point first, then the iterates `x_0..x_budget` of
/// the constant-step Mann iteration from `x` with `λ = (1+κ)/2`. Failure only
/// means nothing was found within the budget.
pub fn approx_fixed_point(op: &Operator, x: &Vector, b: f64, delta: f64, budget: u64) -> Result<Vector> {
    if !(b > 0.0 && delta > 0.0 && budget >= 1) {
        return Err(Error::InvalidParameter("approx_fixed_point needs b > 0, delta > 0, budget >= 1".into()));
    }
    x.ensure_dim(op.dim)?;
    if let Some(p) = &op.known_fixed_point {
        if x.dist(p) <= b && op.residual_unchecked(p.as_slice()) < delta {
            return Ok(p.clone());
        }
    }
    let lambda = 0.5 * (1.0 + op.kappa);
    let mut y = x.as_slice().to_vec();
    let mut ty = vec![0.0; op.dim];
    for step in 0..=budget {
        op.eval_into(&y, &mut ty);
        let r = dist_sq(&y, &ty).sqrt();
        if r < delta && dist_sq(x.as_slice(), &y).sqrt() <= b {
            return Ok(Vector::from_raw(y));
        }
        if step == budget {
            break;
        }
        for (yi, ti) in y.iter_mut().zip(&ty) {
            *yi = lambda * *yi + (1.0 - lambda) * ti;
        }
    }
    Err(Error::NoApproxFixedPoint { b, delta, budget })
}
