//! Points, tangent vectors and the map family `x -> A x + eps * phi(x) (mod 1)` on the flat
//! torus R^2/Z^2, with exact first and second derivatives.
//!
//! `phi(x) = sum_k a_k sin(2 pi k.x + phase_k)` is a trigonometric polynomial, so every
//! derivative below is analytic. Lifted variants (`*_lift`) work on R^2 directly and are
//! what curve transport uses to avoid chart tears.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Residual accepted by [`TorusMap::inverse`].
pub const INVERSE_TOL: f64 = 1e-10;
/// Iteration cap for [`TorusMap::inverse`].
pub const INVERSE_MAX_ITER: usize = 200;

fn wrap01(v: f64) -> f64 {
    let r = v.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

fn wrap_half(v: f64) -> f64 {
    v - v.round()
}

/// A point of the torus, always stored reduced to [0,1)^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x: f64,
    pub y: f64,
}

impl TorusPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x: wrap01(x), y: wrap01(y) }
    }

    pub fn from_vec(v: Vec2) -> Self {
        Self::new(v.x, v.y)
    }

    pub fn to_vec(self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Shortest displacement from `self` to `other` (components in [-1/2, 1/2]).
    pub fn displacement_to(self, other: TorusPoint) -> Vec2 {
        Vec2::new(wrap_half(other.x - self.x), wrap_half(other.y - self.y))
    }

    /// Flat-torus distance: minimum over integer translates.
    pub fn dist(self, other: TorusPoint) -> f64 {
        self.displacement_to(other).norm()
    }

    /// The representative of `self` in R^2 closest to `reference`.
    pub fn lift_near(self, reference: Vec2) -> Vec2 {
        let r = TorusPoint::from_vec(reference);
        reference + r.displacement_to(self)
    }
}

/// A tangent vector in the global trivialization T T^2 = T^2 x R^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub base: TorusPoint,
    pub v: Vec2,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.v.norm()
    }
}

/// One term `a sin(2 pi k.x + phase)` of the perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub k: [i32; 2],
    pub amp: [f64; 2],
    #[serde(default)]
    pub phase: f64,
}

impl FourierMode {
    fn kvec(&self) -> Vec2 {
        Vec2::new(self.k[0] as f64, self.k[1] as f64)
    }

    fn avec(&self) -> Vec2 {
        Vec2::new(self.amp[0], self.amp[1])
    }
}

/// Second-order jet of a curve at one parameter value: (gamma, gamma', gamma'').
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub p: TorusPoint,
    pub d1: Vec2,
    pub d2: Vec2,
}

impl Jet2 {
    /// Signed curvature `det(d1, d2) / |d1|^3`.
    pub fn curvature(&self) -> f64 {
        curvature(self.d1, self.d2)
    }
}

pub fn curvature(d1: Vec2, d2: Vec2) -> f64 {
    let n = d1.norm();
    (d1.x * d2.y - d1.y * d2.x) / (n * n * n)
}

/// `x -> A x + eps * phi(x) (mod 1)` with `A` integer, `|det A| = 1`, hyperbolic.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusMap {
    matrix: [[i64; 2]; 2],
    modes: Vec<FourierMode>,
    epsilon: f64,
    a: Mat2,
    a_inv: Mat2,
}

impl TorusMap {
    pub fn new(matrix: [[i64; 2]; 2], modes: Vec<FourierMode>, epsilon: f64) -> Result<Self> {
        let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
        if det.abs() != 1 {
            return Err(LabError::InvalidMap(format!("|det A| = {} is not 1", det.abs())));
        }
        let trace = matrix[0][0] + matrix[1][1];
        // real eigenvalues off the unit circle: tr^2 > 4 det and tr^2 != (1+det)^2
        let hyperbolic = if det == 1 { trace.abs() > 2 } else { trace != 0 };
        if !hyperbolic {
            return Err(LabError::InvalidMap(format!(
                "matrix with trace {trace} and det {det} is not hyperbolic"
            )));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(LabError::InvalidMap(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        for m in &modes {
            if !(m.amp[0].is_finite() && m.amp[1].is_finite() && m.phase.is_finite()) {
                return Err(LabError::InvalidMap("non-finite Fourier mode".into()));
            }
        }
        let a = Mat2::new(
            matrix[0][0] as f64,
            matrix[0][1] as f64,
            matrix[1][0] as f64,
            matrix[1][1] as f64,
        );
        let d = det as f64;
        let a_inv = Mat2::new(a[(1, 1)] / d, -a[(0, 1)] / d, -a[(1, 0)] / d, a[(0, 0)] / d);
        let map = Self { matrix, modes, epsilon, a, a_inv };
        let c = map.epsilon * map.lip_dphi() * op_norm(&map.a_inv);
        if c >= 1.0 {
            return Err(LabError::InvalidMap(format!(
                "eps * Lip(Dphi) * |A^-1| = {c} is not below 1"
            )));
        }
        Ok(map)
    }

    /// The unperturbed automorphism `L_A`.
    pub fn linear(matrix: [[i64; 2]; 2]) -> Result<Self> {
        Self::new(matrix, Vec::new(), 0.0)
    }

    pub fn matrix(&self) -> [[i64; 2]; 2] {
        self.matrix
    }

    pub fn modes(&self) -> &[FourierMode] {
        &self.modes
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn linear_part(&self) -> Mat2 {
        self.a
    }

    pub fn linear_part_inverse(&self) -> Mat2 {
        self.a_inv
    }

    pub fn is_linear(&self) -> bool {
        self.epsilon == 0.0 || self.modes.iter().all(|m| m.amp == [0.0, 0.0])
    }

    /// Same linear part and modes with a different perturbation scale.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.matrix, self.modes.clone(), epsilon)
    }

    /// `sup |D phi|` (operator norm bound).
    pub fn sup_dphi(&self) -> f64 {
        self.modes.iter().map(|m| m.avec().norm() * TAU * m.kvec().norm()).sum()
    }

    /// Lipschitz constant of `D phi`, i.e. a bound for `sup |D^2 phi|`.
    pub fn lip_dphi(&self) -> f64 {
        self.modes.iter().map(|m| m.avec().norm() * (TAU * m.kvec().norm()).powi(2)).sum()
    }

    /// Bound for `sup |D^2 f|` as a bilinear form.
    pub fn sup_d2f(&self) -> f64 {
        if self.is_linear() {
            0.0
        } else {
            self.epsilon * self.lip_dphi()
        }
    }

    /// Bound for `sup |Df^-1|` by a Neumann series around the linear part.
    pub fn sup_dfinv(&self) -> f64 {
        let c = self.epsilon * self.sup_dphi() * op_norm(&self.a_inv);
        op_norm(&self.a_inv) / (1.0 - c).max(1e-12)
    }

    /// A bound `C0'` for both `|f|_{C^2}` and `|f^-1|_{C^2}` from the fields.
    pub fn c2_bound(&self) -> f64 {
        let e = self.epsilon;
        let df = op_norm(&self.a) + e * self.sup_dphi();
        let c = e * self.sup_dphi() * op_norm(&self.a_inv);
        // (A + eps Dphi)^-1 = (I + eps A^-1 Dphi)^-1 A^-1, Neumann series
        let dfinv = op_norm(&self.a_inv) / (1.0 - c).max(1e-12);
        let d2f = self.sup_d2f();
        let d2finv = dfinv.powi(3) * d2f;
        df.max(dfinv).max(d2f).max(d2finv).max(1.0)
    }

    pub fn phi(&self, x: Vec2) -> Vec2 {
        let mut out = Vec2::zeros();
        for m in &self.modes {
            let th = TAU * m.kvec().dot(&x) + m.phase;
            out += m.avec() * th.sin();
        }
        out
    }

    pub fn dphi(&self, x: Vec2) -> Mat2 {
        let mut out = Mat2::zeros();
        for m in &self.modes {
            let k = m.kvec();
            let th = TAU * k.dot(&x) + m.phase;
            out += m.avec() * (k * (TAU * th.cos())).transpose();
        }
        out
    }

    /// `D^2 phi(x)(v, w)`.
    pub fn d2phi(&self, x: Vec2, v: Vec2, w: Vec2) -> Vec2 {
        let mut out = Vec2::zeros();
        for m in &self.modes {
            let k = m.kvec();
            let th = TAU * k.dot(&x) + m.phase;
            out -= m.avec() * ((k.dot(&v) * k.dot(&w)) * (TAU * TAU * th.sin()));
        }
        out
    }

    /// The lift `A x + eps phi(x)` on R^2.
    pub fn apply_lift(&self, x: Vec2) -> Vec2 {
        if self.is_linear() {
            self.a * x
        } else {
            self.a * x + self.phi(x) * self.epsilon
        }
    }

    pub fn apply(&self, p: TorusPoint) -> TorusPoint {
        TorusPoint::from_vec(self.apply_lift(p.to_vec()))
    }

    pub fn differential_lift(&self, x: Vec2) -> Mat2 {
        if self.is_linear() {
            self.a
        } else {
            self.a + self.dphi(x) * self.epsilon
        }
    }

    pub fn differential(&self, p: TorusPoint) -> Mat2 {
        self.differential_lift(p.to_vec())
    }

    pub fn second_differential_lift(&self, x: Vec2, v: Vec2, w: Vec2) -> Vec2 {
        if self.is_linear() {
            Vec2::zeros()
        } else {
            self.d2phi(x, v, w) * self.epsilon
        }
    }

    pub fn second_differential(&self, p: TorusPoint, v: Vec2, w: Vec2) -> Vec2 {
        self.second_differential_lift(p.to_vec(), v, w)
    }

    /// Preimage by the fixed-point iteration `p <- A^-1 (q - eps phi(p))`.
    pub fn inverse(&self, q: TorusPoint) -> Result<TorusPoint> {
        let qv = q.to_vec();
        let mut p = self.a_inv * qv;
        if self.is_linear() {
            return Ok(TorusPoint::from_vec(p));
        }
        for _ in 0..INVERSE_MAX_ITER {
            let next = self.a_inv * (qv - self.phi(p) * self.epsilon);
            let step = (next - p).norm();
            p = next;
            if step <= 1e-15 {
                break;
            }
        }
        let out = TorusPoint::from_vec(p);
        let residual = self.apply(out).dist(q);
        if residual > INVERSE_TOL {
            return Err(LabError::NonConvergence { iterations: INVERSE_MAX_ITER, residual });
        }
        Ok(out)
    }

    /// `Df(p)^-1`.
    pub fn inverse_differential(&self, p: TorusPoint) -> Mat2 {
        inv2(&self.differential(p))
    }

    /// Chain rule for curve jets: `(f(p), Df d1, Df d2 + D^2 f(d1, d1))`.
    pub fn push_jet(&self, j: &Jet2) -> Jet2 {
        let (p, d1, d2) = self.push_jet_lift(j.p.to_vec(), j.d1, j.d2);
        Jet2 { p: TorusPoint::from_vec(p), d1, d2 }
    }

    /// [`TorusMap::push_jet`] on a lifted position.
    pub fn push_jet_lift(&self, p: Vec2, d1: Vec2, d2: Vec2) -> (Vec2, Vec2, Vec2) {
        let df = self.differential_lift(p);
        (self.apply_lift(p), df * d1, df * d2 + self.second_differential_lift(p, d1, d1))
    }
}

/// Spectral norm of a 2x2 matrix.
pub fn op_norm(m: &Mat2) -> f64 {
    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let a = m[(0, 0)] / scale;
    let b = m[(0, 1)] / scale;
    let c = m[(1, 0)] / scale;
    let d = m[(1, 1)] / scale;
    let s = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
    scale * ((s + disc) / 2.0).sqrt()
}

pub fn inv2(m: &Mat2) -> Mat2 {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Mat2::new(m[(1, 1)] / det, -m[(0, 1)] / det, -m[(1, 0)] / det, m[(0, 0)] / det)
}

pub fn det2(m: &Mat2) -> f64 {
    m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
}

/// Angle of the line spanned by `v`, in [0, pi).
pub fn line_angle(v: Vec2) -> f64 {
    let a = v.y.atan2(v.x).rem_euclid(PI);
    if a >= PI {
        0.0
    } else {
        a
    }
}

pub fn unit_from_angle(theta: f64) -> Vec2 {
    Vec2::new(theta.cos(), theta.sin())
}

/// The two generators used throughout: `A = [[2,1],[1,1]]` and `B = [[3,5],[1,2]]`.
pub const MATRIX_A: [[i64; 2]; 2] = [[2, 1], [1, 1]];
pub const MATRIX_B: [[i64; 2]; 2] = [[3, 5], [1, 2]];
