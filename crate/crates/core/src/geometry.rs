//! Bounded domains and their elementary operators.
//!
//! Everything downstream runs on one of three domains: the unit interval,
//! the unit hypercube, or the projected simplex (nonnegative coordinates
//! summing to at most one). Reflection is implemented by the period-2
//! triangle-wave [`fold`], projection by Euclidean nearest point, and the
//! simplex is reached from the hypercube through a stick-breaking map.

use crate::{Error, Result};
use rand::Rng;

/// A point is a coordinate vector whose length matches its domain's
/// dimension; the operators in this module produce points contained in
/// their target domain by construction.
pub type Point = Vec<f64>;

/// The constraint set everything diffuses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// `[0, 1]`.
    UnitInterval,
    /// `[0, 1]^d`.
    UnitHypercube(usize),
    /// `{x in R^d : x_i >= 0, sum_i x_i <= 1}`, the simplex with the slack
    /// coordinate dropped so it has nonempty interior in `R^d`.
    ProjectedSimplex(usize),
}

impl Domain {
    /// Number of free coordinates.
    pub fn dim(&self) -> usize {
        match self {
            Domain::UnitInterval => 1,
            Domain::UnitHypercube(d) | Domain::ProjectedSimplex(d) => *d,
        }
    }

    /// Whether `p` lies in the closure of the domain, up to `tol`.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        if p.len() != self.dim() {
            return false;
        }
        match self {
            Domain::UnitInterval | Domain::UnitHypercube(_) => {
                p.iter().all(|&x| (-tol..=1.0 + tol).contains(&x))
            }
            Domain::ProjectedSimplex(_) => {
                p.iter().all(|&x| x >= -tol) && p.iter().sum::<f64>() <= 1.0 + tol
            }
        }
    }

    /// Validates dimension and containment, with a descriptive error.
    pub fn check_contains(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        if !self.contains(p, 1e-12) {
            return Err(Error::OutOfDomain(format!("{p:?} not in {self:?}")));
        }
        Ok(())
    }
}

/// Reflects `x` into `[0, 1]`: the period-2 triangle wave.
///
/// Computed by exact modular reduction rather than iterated reflection, so
/// the cost is independent of |x|. Idempotent on `[0, 1]`.
pub fn fold(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("fold input"));
    }
    Ok(fold_finite(x))
}

/// `fold` without the finiteness check, for inner loops that have already
/// validated their arithmetic.
#[inline]
pub(crate) fn fold_finite(x: f64) -> f64 {
    let r = x.rem_euclid(2.0);
    if r <= 1.0 {
        r
    } else {
        2.0 - r
    }
}

/// Componentwise [`fold`] onto the interval or hypercube.
///
/// Reflections on the hypercube do not interact across coordinates, so the
/// d-dimensional reflection operator factorizes. The simplex is rejected:
/// reflection there is handled by mapping to the cube first (see
/// [`stick_break_inv`]).
pub fn fold_point(p: &[f64], domain: &Domain) -> Result<Point> {
    match domain {
        Domain::ProjectedSimplex(_) => Err(Error::UnsupportedDomain(
            "fold_point on the simplex; map to the cube with stick_break_inv first",
        )),
        _ => {
            if p.len() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    expected: domain.dim(),
                    got: p.len(),
                });
            }
            p.iter().map(|&x| fold(x)).collect()
        }
    }
}

/// Euclidean nearest point of the domain.
///
/// Clamping on the interval and hypercube. On the projected simplex: clamp
/// to the positive orthant, and if the mass constraint is violated project
/// onto the face `{sum = 1}` with the sorting algorithm of Held, Wolfe &
/// Crowder.
pub fn project(p: &[f64], domain: &Domain) -> Result<Point> {
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("project input"));
    }
    if p.len() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: p.len(),
        });
    }
    match domain {
        Domain::UnitInterval | Domain::UnitHypercube(_) => {
            Ok(p.iter().map(|&x| x.clamp(0.0, 1.0)).collect())
        }
        Domain::ProjectedSimplex(_) => {
            let clamped: Vec<f64> = p.iter().map(|&x| x.max(0.0)).collect();
            if clamped.iter().sum::<f64>() <= 1.0 {
                return Ok(clamped);
            }
            // The mass constraint is active: project the raw point onto the
            // full simplex {x >= 0, sum x = 1}.
            let mut sorted = p.to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut cumsum = 0.0;
            let mut tau = 0.0;
            for (j, &u) in sorted.iter().enumerate() {
                cumsum += u;
                let candidate = (cumsum - 1.0) / (j + 1) as f64;
                if u - candidate > 0.0 {
                    tau = candidate;
                }
            }
            Ok(p.iter().map(|&x| (x - tau).max(0.0)).collect())
        }
    }
}

/// Stick-breaking map from the unit hypercube onto the projected simplex:
/// `y_i = x_i * prod_{j>i} (1 - x_j)`.
pub fn stick_break(x: &[f64]) -> Result<Point> {
    if x.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::OutOfDomain(format!("{x:?} not in the unit cube")));
    }
    let d = x.len();
    let mut y = vec![0.0; d];
    // tail = prod_{j>i} (1 - x_j), accumulated from the right.
    let mut tail = 1.0;
    for i in (0..d).rev() {
        y[i] = x[i] * tail;
        tail *= 1.0 - x[i];
    }
    Ok(y)
}

/// Inverse of [`stick_break`]: `x_i = y_i / (1 - sum_{j>i} y_j)`.
///
/// Defined on the simplex interior; a denominator at or below `1e-12` is a
/// collapsed stick and is reported as a boundary degeneracy.
pub fn stick_break_inv(y: &[f64]) -> Result<Point> {
    let d = y.len();
    let mut x = vec![0.0; d];
    let mut tail_sum = 0.0; // sum_{j>i} y_j
    for i in (0..d).rev() {
        let denom = 1.0 - tail_sum;
        if denom <= 1e-12 {
            return Err(Error::BoundaryDegeneracy { index: i, denom });
        }
        x[i] = (y[i] / denom).clamp(0.0, 1.0);
        tail_sum += y[i];
    }
    Ok(x)
}

/// Log absolute determinant of the stick-breaking Jacobian at `x`.
///
/// The map is triangular (`y_i` depends only on `x_j` for `j >= i`), so the
/// determinant is the product of the diagonal entries
/// `dy_i/dx_i = prod_{j>i} (1 - x_j)`, giving
/// `logdet = sum_{j=2}^{d} (j-1) ln(1 - x_j)`.
///
/// Boundary inputs (`x_j = 1` for some `j >= 2`) return negative infinity:
/// the stick has collapsed and the map is singular there.
pub fn stick_break_logdet(x: &[f64]) -> Result<f64> {
    if x.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::OutOfDomain(format!("{x:?} not in the unit cube")));
    }
    let mut logdet = 0.0;
    for (j, &xj) in x.iter().enumerate().skip(1) {
        logdet += j as f64 * (1.0 - xj).ln();
    }
    Ok(logdet)
}

/// Exact uniform draw from the domain.
///
/// Hypercube coordinates are independent `U[0,1)`. The simplex uses the
/// exponential-ratio construction of the flat Dirichlet: d+1 iid Exp(1)
/// variables normalized to sum one, slack coordinate dropped. Each free
/// coordinate then has mean `1/(d+1)`.
pub fn uniform_sample<R: Rng + ?Sized>(domain: &Domain, rng: &mut R) -> Point {
    match domain {
        Domain::UnitInterval => vec![rng.gen::<f64>()],
        Domain::UnitHypercube(d) => (0..*d).map(|_| rng.gen::<f64>()).collect(),
        Domain::ProjectedSimplex(d) => {
            let exp: Vec<f64> = (0..d + 1)
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let total: f64 = exp.iter().sum();
            exp[..*d].iter().map(|&e| e / total).collect()
        }
    }
}
