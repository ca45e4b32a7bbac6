//! Finite-dimensional real inner-product space primitives.
//!
//! Everything downstream works over `R^d` with the Euclidean inner product.
//! The inequalities that the rest of the crate checks are pointwise, so small
//! dimensions are enough to exercise them.

use std::fmt;
use std::ops::{Add, Index, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of `R^d` with finite components.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector {
    components: Vec<f64>,
}

impl Vector {
    /// Builds a vector, rejecting empty input and non-finite components.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("vector must have dim >= 1".into()));
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self { components })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "dim must be positive");
        Self { components: vec![0.0; dim] }
    }

    /// The `i`-th standard basis vector.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.components[i] = 1.0;
        v
    }

    /// Internal constructor for buffers produced by finite arithmetic.
    pub(crate) fn from_raw(components: Vec<f64>) -> Self {
        debug_assert!(!components.is_empty());
        Self { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.components
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.components
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Vector {
        Vector::from_raw(self.components.iter().map(|c| s * c).collect())
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.components, &self.components)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `‖self − other‖²`. Panics on dimension mismatch.
    pub fn dist_sq(&self, other: &Vector) -> f64 {
        dist_sq(&self.components, &other.components)
    }

    pub fn dist(&self, other: &Vector) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub(crate) fn ensure_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: self.dim() });
        }
        Ok(())
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.components).finish()
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.components
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.components[i]
    }
}

impl Sub for &Vector {
    type Output = Vector;

    fn sub(self, rhs: &Vector) -> Vector {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch");
        Vector::from_raw(self.components.iter().zip(&rhs.components).map(|(a, b)| a - b).collect())
    }
}

impl Add for &Vector {
    type Output = Vector;

    fn add(self, rhs: &Vector) -> Vector {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch");
        Vector::from_raw(self.components.iter().zip(&rhs.components).map(|(a, b)| a + b).collect())
    }
}

// Slice kernels. Summation is strictly left to right so that `dot(u, v)` and
// `dot(v, u)` perform identical floating-point operations.

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v) {
        acc += a * b;
    }
    acc
}

pub(crate) fn dist_sq(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "dimension mismatch");
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v) {
        let d = a - b;
        acc += d * d;
    }
    acc
}

fn check_dims(u: &Vector, v: &Vector) -> Result<()> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), found: v.dim() });
    }
    Ok(())
}

fn check_unit_interval(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("convex weight t={t} outside [0, 1]")));
    }
    Ok(())
}

/// Euclidean inner product `Σ uᵢvᵢ`.
pub fn inner(u: &Vector, v: &Vector) -> Result<f64> {
    check_dims(u, v)?;
    Ok(dot(u.as_slice(), v.as_slice()))
}

pub fn norm(u: &Vector) -> f64 {
    u.norm()
}

/// `t·u + (1−t)·v`, defined for `t ∈ [0, 1]` only.
pub fn convex_combination(t: f64, u: &Vector, v: &Vector) -> Result<Vector> {
    check_unit_interval(t)?;
    check_dims(u, v)?;
    Ok(Vector::from_raw(u.as_slice().iter().zip(v.as_slice()).map(|(a, b)| t * a + (1.0 - t) * b).collect()))
}

/// `‖x+y‖² − ‖x‖² − ‖y‖² − 2⟨x,y⟩`, zero in exact arithmetic.
pub fn identity_defect_sum(x: &Vector, y: &Vector) -> Result<f64> {
    let xy = inner(x, y)?;
    let sum = x + y;
    Ok(sum.norm_sq() - x.norm_sq() - y.norm_sq() - 2.0 * xy)
}

/// `‖tx+(1−t)y‖² − (t‖x‖² + (1−t)‖y‖² − t(1−t)‖x−y‖²)`, zero in exact arithmetic.
pub fn identity_defect_convex(t: f64, x: &Vector, y: &Vector) -> Result<f64> {
    let lhs = convex_combination(t, x, y)?.norm_sq();
    let rhs = t * x.norm_sq() + (1.0 - t) * y.norm_sq() - t * (1.0 - t) * x.dist_sq(y);
    Ok(lhs - rhs)
}

/// Relative tolerance test used by every "mathematically nonpositive" check:
/// `defect ≤ abs_floor + rel · scale`.
pub fn within_tolerance(defect: f64, scale: f64, rel: f64) -> bool {
    defect <= ABS_FLOOR + rel * scale
}

/// Absolute floor added to every relative tolerance.
pub const ABS_FLOOR: f64 = 1e-12;
