//! Poincare ball and Lorentz (hyperboloid) primitives.
//!
//! The ball is the canonical storage model; Lorentz coordinates are produced
//! on demand via [`lift_to_lorentz`] for the cone computations. All maps are
//! pure functions over immutable values and all arithmetic is f64.

use thiserror::Error;

use crate::util::{artanh, dot, norm, norm_sq};

/// Margin keeping ball points strictly interior: sqrt(c)*||x|| <= 1 - BALL_MARGIN.
pub const BALL_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in input vector")]
    NonFiniteInput,
    #[error("curvature must be positive and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("operation undefined at the hyperboloid apex (zero space component)")]
    ApexUndefined,
}

/// Positive curvature parameter `c` of the model; the ball has radius 1/sqrt(c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self, GeometryError> {
        if c.is_finite() && c > 0.0 {
            Ok(Curvature(c))
        } else {
            Err(GeometryError::InvalidCurvature(c))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }

    /// Largest Euclidean norm a ball point may have.
    pub fn max_norm(self) -> f64 {
        (1.0 - BALL_MARGIN) / self.sqrt()
    }
}

/// Point strictly inside the Poincare ball of curvature `c`.
///
/// Construction goes through [`project_to_ball`] (or [`BallPoint::origin`]),
/// so `c * ||coords||^2 <= (1 - 1e-6)^2` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
}

impl BallPoint {
    pub fn origin(dim: usize) -> Self {
        BallPoint {
            coords: vec![0.0; dim],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    fn neg(&self) -> BallPoint {
        BallPoint {
            coords: self.coords.iter().map(|x| -x).collect(),
        }
    }
}

/// Tangent vector at some base point of the ball (the base is tracked by the
/// caller; only finiteness is required of the coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.iter().all(|x| x.is_finite()) {
            Ok(TangentVector { coords })
        } else {
            Err(GeometryError::NonFiniteInput)
        }
    }

    pub fn zero(dim: usize) -> Self {
        TangentVector {
            coords: vec![0.0; dim],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }
}

/// Point on the upper sheet of the hyperboloid c<x,x>_L = -1.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    pub time: f64,
    pub space: Vec<f64>,
}

impl LorentzPoint {
    pub fn space_norm(&self) -> f64 {
        norm(&self.space)
    }
}

/// Conformal factor lambda_w^c = 2 / (1 - c ||w||^2); equals 2 at the origin.
pub fn conformal_factor(w: &BallPoint, c: Curvature) -> f64 {
    2.0 / (1.0 - c.value() * norm_sq(w.coords()))
}

/// Gyrovector addition x (+)_c y on the ball; the result is re-projected to
/// keep the containment margin.
pub fn mobius_add(x: &BallPoint, y: &BallPoint, c: Curvature) -> BallPoint {
    let cv = c.value();
    let x2 = norm_sq(x.coords());
    let y2 = norm_sq(y.coords());
    let xy = dot(x.coords(), y.coords());

    let coef_x = 1.0 + 2.0 * cv * xy + cv * y2;
    let coef_y = 1.0 - cv * x2;
    let denom = 1.0 + 2.0 * cv * xy + cv * cv * x2 * y2;

    let coords: Vec<f64> = x
        .coords()
        .iter()
        .zip(y.coords())
        .map(|(a, b)| (coef_x * a + coef_y * b) / denom)
        .collect();
    project_to_ball(&coords, c).expect("mobius_add of interior points is finite")
}

/// Exponential map exp_w^c(v). The zero tangent returns `w` exactly.
pub fn exp_map(w: &BallPoint, v: &TangentVector, c: Curvature) -> BallPoint {
    let vn = v.norm();
    if vn == 0.0 {
        return w.clone();
    }
    let sc = c.sqrt();
    let lambda = conformal_factor(w, c);
    let scale = (sc * lambda * vn / 2.0).tanh() / (sc * vn);
    let step = BallPoint {
        coords: v.coords().iter().map(|x| x * scale).collect(),
    };
    mobius_add(w, &step, c)
}

/// Logarithmic map log_w^c(y), the inverse of [`exp_map`]. `y = w` returns
/// the zero tangent.
pub fn log_map(w: &BallPoint, y: &BallPoint, c: Curvature) -> TangentVector {
    let diff = mobius_add(&w.neg(), y, c);
    let dn = diff.norm();
    if dn == 0.0 {
        return TangentVector::zero(w.dim());
    }
    let sc = c.sqrt();
    let lambda = conformal_factor(w, c);
    let scale = (2.0 / (sc * lambda)) * artanh(sc * dn) / dn;
    TangentVector {
        coords: diff.coords().iter().map(|x| x * scale).collect(),
    }
}

/// Geodesic distance d_c(x, y) = (2/sqrt(c)) artanh(sqrt(c) ||(-x) (+) y||).
pub fn geodesic_distance(x: &BallPoint, y: &BallPoint, c: Curvature) -> f64 {
    if x == y {
        return 0.0;
    }
    let diff = mobius_add(&x.neg(), y, c);
    let sc = c.sqrt();
    (2.0 / sc) * artanh(sc * diff.norm())
}

/// Validate a raw vector as a ball point, rescaling to norm (1 - 1e-6)/sqrt(c)
/// when it is outside the safe interior. Interior points pass through
/// unchanged.
pub fn project_to_ball(coords: &[f64], c: Curvature) -> Result<BallPoint, GeometryError> {
    if !coords.iter().all(|x| x.is_finite()) {
        return Err(GeometryError::NonFiniteInput);
    }
    let n = norm(coords);
    let max = c.max_norm();
    if n <= max {
        return Ok(BallPoint {
            coords: coords.to_vec(),
        });
    }
    let scale = max / n;
    Ok(BallPoint {
        coords: coords.iter().map(|x| x * scale).collect(),
    })
}

/// Diffeomorphism from the ball onto the hyperboloid sheet:
/// space = 2x / (1 - c||x||^2), time = (1/sqrt(c)) (1 + c||x||^2) / (1 - c||x||^2).
pub fn lift_to_lorentz(x: &BallPoint, c: Curvature) -> LorentzPoint {
    let cv = c.value();
    let n2 = norm_sq(x.coords());
    let denom = 1.0 - cv * n2;
    LorentzPoint {
        time: (1.0 + cv * n2) / (denom * c.sqrt()),
        space: x.coords().iter().map(|v| 2.0 * v / denom).collect(),
    }
}

/// Inverse of [`lift_to_lorentz`]: x = space / (1 + sqrt(c) * time).
pub fn lorentz_to_poincare(p: &LorentzPoint, c: Curvature) -> Result<BallPoint, GeometryError> {
    let denom = 1.0 + c.sqrt() * p.time;
    let coords: Vec<f64> = p.space.iter().map(|v| v / denom).collect();
    project_to_ball(&coords, c)
}

/// Lorentzian inner product <u,v>_L = -u_t v_t + <u_s, v_s>.
pub fn lorentz_inner(u: &LorentzPoint, v: &LorentzPoint) -> f64 {
    -u.time * v.time + dot(&u.space, &v.space)
}
