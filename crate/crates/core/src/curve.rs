//! Admissible curves carried as second-order jets, their pushforwards with
//! density bookkeeping, the curvature constant `K0`, and density ratios along
//! local unstable leaves.
//!
//! A curve is a list of nodes `(t, p, p', p'')` on a lifted, continuous
//! parametrization together with the parameter density `g = dnu/dt`. Pushing
//! a curve maps every jet by the chain rule and leaves `g` untouched, so the
//! density with respect to arc length, `g / |p'|`, picks up exactly the
//! change-of-variables factor. New nodes are inserted by quintic Hermite
//! interpolation of the jets, with `g` interpolated linearly in `t`, which
//! keeps the trapezoid mass unchanged.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::cone::{CertReport, ConeSystem};
use crate::error::{LabError, Result};
use crate::random_system::{task_rng, GeneratorLaw};
use crate::torus::{curvature, det2, Jet2, TorusMap, TorusPoint, Vec2};

/// Default target spacing between nodes.
pub const DEFAULT_SPACING: f64 = 1.0 / 512.0;
/// Spacing used for local unstable leaves.
pub const LEAF_SPACING: f64 = 1.0 / 4096.0;
/// Half length of local unstable leaves.
pub const LEAF_HALF_LENGTH: f64 = 0.05;
/// Distance beyond which a point is not considered to lie on a leaf.
pub const LEAF_TOLERANCE: f64 = 1e-7;
pub const CURVE_CSV_HEADER: &str = "t,x,y,dx,dy,kappa,log_density";

// Three-point Gauss-Legendre rule on [0, 1].
const GL_NODES: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
const GL_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// Quintic Hermite interpolant of two second-order jets, in monomial form on `u in [0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Quintic {
    t0: f64,
    dt: f64,
    c: [Vec2; 6],
}

impl Quintic {
    #[allow(clippy::too_many_arguments)]
    fn new(t0: f64, t1: f64, p0: Vec2, v0: Vec2, a0: Vec2, p1: Vec2, v1: Vec2, a1: Vec2) -> Self {
        let dt = t1 - t0;
        let c0 = p0;
        let c1 = v0 * dt;
        let c2 = a0 * (0.5 * dt * dt);
        let big_p = p1 - c0 - c1 - c2;
        let big_v = v1 * dt - c1 - c2 * 2.0;
        let big_w = a1 * (dt * dt) - c2 * 2.0;
        let c3 = big_p * 10.0 - big_v * 4.0 + big_w * 0.5;
        let c4 = big_p * -15.0 + big_v * 7.0 - big_w;
        let c5 = big_p * 6.0 - big_v * 3.0 + big_w * 0.5;
        Self { t0, dt, c: [c0, c1, c2, c3, c4, c5] }
    }

    /// Position, first and second derivative with respect to `t`.
    fn eval(&self, t: f64) -> (Vec2, Vec2, Vec2) {
        let u = (t - self.t0) / self.dt;
        let c = &self.c;
        let p = c[0] + (c[1] + (c[2] + (c[3] + (c[4] + c[5] * u) * u) * u) * u) * u;
        let dp = c[1] + (c[2] * 2.0 + (c[3] * 3.0 + (c[4] * 4.0 + c[5] * (5.0 * u)) * u) * u) * u;
        let ddp = c[2] * 2.0 + (c[3] * 6.0 + (c[4] * 12.0 + c[5] * (20.0 * u)) * u) * u;
        (p, dp / self.dt, ddp / (self.dt * self.dt))
    }
}

/// A curve sampled as jets on a lifted parametrization, with a density.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveJet {
    t: Vec<f64>,
    pos: Vec<Vec2>,
    d1: Vec<Vec2>,
    d2: Vec<Vec2>,
    /// Log of the parameter density `dnu/dt`.
    log_g: Vec<f64>,
    spacing: f64,
    lip: f64,
    discarded: f64,
}

/// One quadrature atom of a curve measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveAtom {
    pub pos: Vec2,
    pub tangent: Vec2,
    /// Mass carried by the atom.
    pub weight: f64,
    /// Density with respect to arc length at the atom.
    pub density: f64,
    /// Arc-length coordinate along the curve.
    pub arc: f64,
}

impl CurveJet {
    /// Straight segment from `start` along `direction`, unit mass, uniform density.
    pub fn segment(start: TorusPoint, direction: Vec2, length: f64, spacing: f64) -> Result<Self> {
        Self::segment_with_density(start, direction, length, spacing, |_| 0.0, 0.0)
    }

    /// Straight segment whose arc-length density is proportional to `exp(log_rho(s))`,
    /// normalized to unit mass; `lip` is the declared Lipschitz constant of `log_rho`.
    pub fn segment_with_density(
        start: TorusPoint,
        direction: Vec2,
        length: f64,
        spacing: f64,
        log_rho: impl Fn(f64) -> f64,
        lip: f64,
    ) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) || !(spacing > 0.0 && spacing.is_finite()) {
            return Err(LabError::InvalidArgument(
                "segment length and spacing must be positive".into(),
            ));
        }
        let norm = direction.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(LabError::ZeroVector);
        }
        let u = direction / norm;
        let k = (length / spacing).ceil().max(1.0) as usize;
        let p0 = start.to_vec();
        let t: Vec<f64> = (0..=k).map(|i| length * i as f64 / k as f64).collect();
        let pos = t.iter().map(|&s| p0 + u * s).collect();
        let log_g: Vec<f64> = t.iter().map(|&s| log_rho(s)).collect();
        let mut c = Self {
            t,
            pos,
            d1: vec![u; k + 1],
            d2: vec![Vec2::zeros(); k + 1],
            log_g,
            spacing,
            lip,
            discarded: 0.0,
        };
        let m = c.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(LabError::InvalidArgument("segment density has no finite mass".into()));
        }
        c.log_g.iter_mut().for_each(|g| *g -= m.ln());
        Ok(c)
    }

    /// Builds a curve from explicit nodes; `log_g` is the log parameter density.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        t: Vec<f64>,
        pos: Vec<Vec2>,
        d1: Vec<Vec2>,
        d2: Vec<Vec2>,
        log_g: Vec<f64>,
        spacing: f64,
        lip: f64,
    ) -> Result<Self> {
        let n = t.len();
        if n < 2 || pos.len() != n || d1.len() != n || d2.len() != n || log_g.len() != n {
            return Err(LabError::InvalidArgument(
                "curve needs at least two nodes and matching arrays".into(),
            ));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::InvalidArgument(
                "curve parameters must increase strictly".into(),
            ));
        }
        if d1.iter().any(|v| !(v.norm() > 0.0)) {
            return Err(LabError::ZeroVector);
        }
        Ok(Self { t, pos, d1, d2, log_g, spacing, lip, discarded: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Declared Lipschitz budget `L` of the log-density.
    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn with_lip(mut self, lip: f64) -> Self {
        self.lip = lip;
        self
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t[i]
    }

    /// Lifted position of node `i`.
    pub fn lifted(&self, i: usize) -> Vec2 {
        self.pos[i]
    }

    pub fn point(&self, i: usize) -> TorusPoint {
        TorusPoint::from_vec(self.pos[i])
    }

    pub fn d1(&self, i: usize) -> Vec2 {
        self.d1[i]
    }

    pub fn d2(&self, i: usize) -> Vec2 {
        self.d2[i]
    }

    pub fn jet(&self, i: usize) -> Jet2 {
        Jet2 { p: self.point(i), d1: self.d1[i], d2: self.d2[i] }
    }

    pub fn curvature(&self, i: usize) -> f64 {
        curvature(self.d1[i], self.d2[i])
    }

    /// Log of the density with respect to arc length at node `i`.
    pub fn log_density(&self, i: usize) -> f64 {
        self.log_g[i] - self.d1[i].norm().ln()
    }

    pub fn max_abs_curvature(&self) -> f64 {
        (0..self.len()).map(|i| self.curvature(i).abs()).fold(0.0, f64::max)
    }

    /// Trapezoid mass `sum (g_i + g_{i+1}) / 2 * (t_{i+1} - t_i)`.
    pub fn mass(&self) -> f64 {
        (0..self.len() - 1).map(|i| self.interval_mass(i)).sum()
    }

    /// Mass removed so far by truncation.
    pub fn discarded_mass(&self) -> f64 {
        self.discarded
    }

    /// Multiplies the density by `c > 0`.
    pub fn scaled(mut self, c: f64) -> Self {
        let l = c.ln();
        self.log_g.iter_mut().for_each(|g| *g += l);
        self.discarded *= c;
        self
    }

    fn interval_mass(&self, i: usize) -> f64 {
        0.5 * (self.log_g[i].exp() + self.log_g[i + 1].exp()) * (self.t[i + 1] - self.t[i])
    }

    fn quintic(&self, i: usize) -> Quintic {
        Quintic::new(
            self.t[i],
            self.t[i + 1],
            self.pos[i],
            self.d1[i],
            self.d2[i],
            self.pos[i + 1],
            self.d1[i + 1],
            self.d2[i + 1],
        )
    }

    fn interval_arc(&self, i: usize) -> f64 {
        let q = self.quintic(i);
        let dt = self.t[i + 1] - self.t[i];
        GL_NODES
            .iter()
            .zip(GL_WEIGHTS)
            .map(|(&u, w)| w * q.eval(self.t[i] + u * dt).1.norm())
            .sum::<f64>()
            * dt
    }

    /// Cumulative arc length at every node, starting from 0.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.len());
        s.push(0.0);
        for i in 0..self.len() - 1 {
            let last = s[i];
            s.push(last + self.interval_arc(i));
        }
        s
    }

    pub fn length(&self) -> f64 {
        (0..self.len() - 1).map(|i| self.interval_arc(i)).sum()
    }

    /// Largest slope `|log rho_{i+1} - log rho_i| / arc` between neighbouring nodes.
    pub fn fitted_lipschitz(&self) -> f64 {
        (0..self.len() - 1)
            .map(|i| (self.log_density(i + 1) - self.log_density(i)).abs() / self.interval_arc(i))
            .fold(0.0, f64::max)
    }

    fn locate(&self, t: f64) -> usize {
        let k = self.t.partition_point(|&x| x <= t);
        k.saturating_sub(1).min(self.len() - 2)
    }

    /// Position, derivatives and log parameter density at parameter `t`.
    pub fn eval(&self, t: f64) -> (Vec2, Vec2, Vec2, f64) {
        let k = self.locate(t);
        let (p, v, a) = self.quintic(k).eval(t);
        let u = (t - self.t[k]) / (self.t[k + 1] - self.t[k]);
        let g = (1.0 - u) * self.log_g[k].exp() + u * self.log_g[k + 1].exp();
        (p, v, a, g.ln())
    }

    /// Log arc-length density at parameter `t`.
    pub fn log_density_at(&self, t: f64) -> f64 {
        let (_, v, _, lg) = self.eval(t);
        lg - v.norm().ln()
    }

    pub fn t_range(&self) -> (f64, f64) {
        (self.t[0], self.t[self.len() - 1])
    }

    /// Parameter of the point of the curve closest to `y`, and the distance.
    pub fn project(&self, y: TorusPoint) -> (f64, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.pos.iter().enumerate() {
            let d = TorusPoint::from_vec(*p).dist(y);
            if d < best.1 {
                best = (i, d);
            }
        }
        let i = best.0;
        let yl = TorusPoint::from_vec(self.pos[i]).displacement_to(y) + self.pos[i];
        let (lo, hi) = self.t_range();
        let mut t = self.t[i];
        for _ in 0..60 {
            let (p, v, a, _) = self.eval(t);
            let r = p - yl;
            let f = r.dot(&v);
            let fp = v.dot(&v) + r.dot(&a);
            if fp <= 0.0 {
                break;
            }
            let next = (t - f / fp).clamp(lo, hi);
            let step = (next - t).abs();
            t = next;
            if step * v.norm() < 1e-16 {
                break;
            }
        }
        let (p, _, _, _) = self.eval(t);
        (t, (p - yl).norm())
    }

    /// Quadrature atoms: each interval is split into `per_interval` midpoint cells.
    pub fn atoms(&self, per_interval: usize) -> Vec<CurveAtom> {
        let m = per_interval.max(1);
        let arcs = self.arc_lengths();
        let mut out = Vec::with_capacity((self.len() - 1) * m);
        for i in 0..self.len() - 1 {
            let q = self.quintic(i);
            let dt = (self.t[i + 1] - self.t[i]) / m as f64;
            let (g0, g1) = (self.log_g[i].exp(), self.log_g[i + 1].exp());
            let seg = arcs[i + 1] - arcs[i];
            for j in 0..m {
                let u = (j as f64 + 0.5) / m as f64;
                let (p, v, _) = q.eval(self.t[i] + u * (self.t[i + 1] - self.t[i]));
                let g = (1.0 - u) * g0 + u * g1;
                let speed = v.norm();
                out.push(CurveAtom {
                    pos: p,
                    tangent: v / speed,
                    weight: g * dt,
                    density: g / speed,
                    arc: arcs[i] + u * seg,
                });
            }
        }
        out
    }

    /// Checks cone membership, the curvature bound and the Lipschitz budget.
    pub fn check_admissible(&self, cones: &ConeSystem, k0: f64) -> Result<()> {
        for i in 0..self.len() {
            if !cones.unstable.contains(self.d1[i]) {
                return Err(LabError::ConeExit { step: 0, node: i });
            }
            let k = self.curvature(i).abs();
            if k > k0 {
                return Err(LabError::HypothesisViolated(format!(
                    "curvature {k} above K0 = {k0} at node {i}"
                )));
            }
        }
        let l = self.fitted_lipschitz();
        if l > self.lip * (1.0 + 1e-6) + 1e-9 {
            return Err(LabError::HypothesisViolated(format!(
                "log-density slope {l} above the budget L = {}",
                self.lip
            )));
        }
        Ok(())
    }

    /// CSV with header [`CURVE_CSV_HEADER`]; positions reduced mod 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 96);
        s.push_str(CURVE_CSV_HEADER);
        s.push('\n');
        for i in 0..self.len() {
            let p = self.point(i);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.t[i],
                p.x,
                p.y,
                self.d1[i].x,
                self.d1[i].y,
                self.curvature(i),
                self.log_density(i)
            );
        }
        s
    }

    /// Inserts nodes so that no interval will be longer than the spacing after `map`.
    fn refine_for(&mut self, map: &TorusMap) {
        let h = self.spacing;
        let stretch: Vec<f64> = self
            .pos
            .iter()
            .zip(&self.d1)
            .map(|(p, v)| (map.differential_lift(*p) * v).norm())
            .collect();
        let n = self.len();
        let mut t = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        let mut log_g = Vec::with_capacity(n);
        for i in 0..n {
            t.push(self.t[i]);
            pos.push(self.pos[i]);
            d1.push(self.d1[i]);
            d2.push(self.d2[i]);
            log_g.push(self.log_g[i]);
            if i + 1 == n {
                break;
            }
            let dt = self.t[i + 1] - self.t[i];
            let est = dt * stretch[i].max(stretch[i + 1]);
            let k = (est / h).ceil() as usize;
            if k <= 1 {
                continue;
            }
            let q = self.quintic(i);
            let (g0, g1) = (self.log_g[i].exp(), self.log_g[i + 1].exp());
            for j in 1..k {
                let u = j as f64 / k as f64;
                let tj = self.t[i] + u * dt;
                let (p, v, a) = q.eval(tj);
                t.push(tj);
                pos.push(p);
                d1.push(v);
                d2.push(a);
                log_g.push(((1.0 - u) * g0 + u * g1).ln());
            }
        }
        self.t = t;
        self.pos = pos;
        self.d1 = d1;
        self.d2 = d2;
        self.log_g = log_g;
    }

    /// Applies one map to every jet, then shifts the lift and rescales the parameter.
    fn apply_map(&mut self, map: &TorusMap, cones: &ConeSystem, step: usize) -> Result<()> {
        for i in 0..self.len() {
            let (p, v, a) = map.push_jet_lift(self.pos[i], self.d1[i], self.d2[i]);
            if !cones.unstable.contains(v) {
                return Err(LabError::ConeExit { step, node: i });
            }
            self.pos[i] = p;
            self.d1[i] = v;
            self.d2[i] = a;
        }
        let shift = Vec2::new(self.pos[0].x.floor(), self.pos[0].y.floor());
        self.pos.iter_mut().for_each(|p| *p -= shift);
        let c = self.d1.iter().map(|v| v.norm()).sum::<f64>() / self.len() as f64;
        let t0 = self.t[0];
        let lc = c.ln();
        for i in 0..self.len() {
            self.t[i] = (self.t[i] - t0) * c;
            self.d1[i] /= c;
            self.d2[i] /= c * c;
            self.log_g[i] -= lc;
        }
        Ok(())
    }

    /// Keeps the nodes whose arc coordinate lies in `[a, b]`; the rest of the mass is
    /// recorded as discarded.
    fn truncate_window(&mut self, arcs: &[f64], a: f64, b: f64) {
        let lo = arcs.partition_point(|&s| s < a).min(self.len() - 2);
        let hi = arcs.partition_point(|&s| s <= b).max(lo + 2);
        if lo == 0 && hi >= self.len() {
            return;
        }
        let removed: f64 = (0..lo).map(|i| self.interval_mass(i)).sum::<f64>()
            + (hi - 1..self.len() - 1).map(|i| self.interval_mass(i)).sum::<f64>();
        self.discarded += removed;
        self.t = self.t[lo..hi].to_vec();
        self.pos = self.pos[lo..hi].to_vec();
        self.d1 = self.d1[lo..hi].to_vec();
        self.d2 = self.d2[lo..hi].to_vec();
        self.log_g = self.log_g[lo..hi].to_vec();
    }

    /// Keeps the centered piece of arc length `max_length` when the curve is longer.
    pub fn truncate_centered(&mut self, max_length: f64) {
        let arcs = self.arc_lengths();
        let total = arcs[arcs.len() - 1];
        if total <= max_length {
            return;
        }
        let a = 0.5 * (total - max_length);
        self.truncate_window(&arcs, a, a + max_length);
    }

    /// Keeps the piece within arc distance `half` of parameter `t`.
    pub fn truncate_around(&mut self, t: f64, half: f64) {
        let arcs = self.arc_lengths();
        let k = self.locate(t);
        let frac = (t - self.t[k]) / (self.t[k + 1] - self.t[k]);
        let s = arcs[k] + frac * (arcs[k + 1] - arcs[k]);
        self.truncate_window(&arcs, s - half, s + half);
    }
}

/// How [`push_curve`] treats node spacing and curve length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushOptions {
    /// Insert nodes so that spacing stays at most the curve's target spacing.
    pub resample: bool,
    /// Keep only a centered piece of this arc length after every step.
    pub max_length: Option<f64>,
}

impl Default for PushOptions {
    fn default() -> Self {
        Self { resample: true, max_length: None }
    }
}

/// Pushes `curve` by the composition of `word` (first letter applied first).
pub fn push_curve(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    curve: &CurveJet,
    word: &[usize],
    opts: PushOptions,
) -> Result<CurveJet> {
    let mut c = curve.clone();
    for (step, &i) in word.iter().enumerate() {
        let map = law
            .maps()
            .get(i)
            .ok_or_else(|| LabError::InvalidArgument(format!("letter {i} out of range")))?;
        if opts.resample {
            c.refine_for(map);
        }
        c.apply_map(map, cones, step)?;
        if let Some(m) = opts.max_length {
            c.truncate_centered(m);
        }
    }
    Ok(c)
}

/// The curvature constant and the number of steps after which it is restored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KZero {
    pub k0: f64,
    pub n2: usize,
    /// Curvature contraction factor over `n2` steps.
    pub a: f64,
    /// Curvature created from straight jets over `n2` steps.
    pub b: f64,
}

/// Per-sample maxima `(a, b)` of the curvature recursion over `n` steps.
fn curvature_recursion(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    n: usize,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let (lo, width) = (cones.unstable.from, cones.unstable.width());
    let parts: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = task_rng(seed, s as u64);
            let mut p = Vec2::new(rng.gen(), rng.gen());
            let ang = lo + width * rng.gen_range(0.02..0.98);
            let mut d1 = Vec2::new(ang.cos(), ang.sin());
            let mut d2 = Vec2::zeros();
            let mut log_det = 0.0;
            let mut log_stretch = 0.0;
            for _ in 0..n {
                let map = &law.maps()[law.sample_index(&mut rng)];
                log_det += det2(&map.differential_lift(p)).abs().ln();
                let (q, v, a) = map.push_jet_lift(p, d1, d2);
                let c = v.norm();
                log_stretch += c.ln();
                p = Vec2::new(q.x.rem_euclid(1.0), q.y.rem_euclid(1.0));
                d1 = v / c;
                d2 = a / (c * c);
            }
            ((log_det - 3.0 * log_stretch).exp(), curvature(d1, d2).abs())
        })
        .collect();
    parts.iter().fold((0.0f64, 0.0f64), |(a, b), &(x, y)| (a.max(x), b.max(y)))
}

/// Fits `K0 = 2b / (1 - a)` from `samples` random (point, word, direction) triples:
/// `a` bounds `|det Df^n| / |Df^n v|^3` (how the curvature of a curve is scaled) and `b`
/// the curvature that `n` steps create on a straight jet.
pub fn compute_k0(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    n_probe: usize,
    samples: usize,
    seed: u64,
) -> Result<KZero> {
    if n_probe == 0 || samples == 0 {
        return Err(LabError::InvalidArgument("n_probe and samples must be positive".into()));
    }
    let (a, b) = curvature_recursion(law, cones, n_probe, samples, seed);
    if law.is_linear() {
        return Ok(KZero { k0: 1.0, n2: n_probe, a, b: 0.0 });
    }
    if a >= 1.0 {
        return Err(LabError::ContractionFailure { a });
    }
    Ok(KZero { k0: 2.0 * b / (1.0 - a), n2: n_probe, a, b })
}

/// A local unstable leaf through a point, carrying the density obtained by pushing
/// a uniform seed forward along the past word.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstableLeaf {
    curve: CurveJet,
    base_t: f64,
    n_trunc: usize,
}

impl UnstableLeaf {
    pub fn curve(&self) -> &CurveJet {
        &self.curve
    }

    /// Parameter of the base point on the leaf.
    pub fn base_t(&self) -> f64 {
        self.base_t
    }

    pub fn n_trunc(&self) -> usize {
        self.n_trunc
    }

    pub fn point_at(&self, t: f64) -> TorusPoint {
        TorusPoint::from_vec(self.curve.eval(t).0)
    }

    /// Parameter of `y` on the leaf; fails when `y` is off the leaf.
    pub fn locate(&self, y: TorusPoint) -> Result<f64> {
        let (t, d) = self.curve.project(y);
        if d > LEAF_TOLERANCE {
            return Err(LabError::HypothesisViolated(format!(
                "point is {d:e} away from the unstable leaf"
            )));
        }
        Ok(t)
    }

    /// `log J(x, y)` for `y` at parameter `t`: log-density at `t` minus at the base.
    pub fn log_ratio_at(&self, t: f64) -> f64 {
        if t == self.base_t {
            return 0.0;
        }
        self.curve.log_density_at(t) - self.curve.log_density_at(self.base_t)
    }
}

/// Builds the local unstable leaf through `x` for the last `n_trunc` letters of `past`.
///
/// The backward orbit of `x` is computed with the inverse maps; a straight segment in the
/// unstable bisector through the oldest preimage is then pushed forward, recentred after
/// every step on the matching orbit point. Forward pushing only contracts the stable
/// error of that orbit, so the leaf passes through `x` up to round-off.
pub fn unstable_leaf(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    past: &[usize],
    x: TorusPoint,
    n_trunc: usize,
    half_length: f64,
    spacing: f64,
) -> Result<UnstableLeaf> {
    if past.len() < n_trunc {
        return Err(LabError::InvalidArgument(format!(
            "past word has length {} < n_trunc = {n_trunc}",
            past.len()
        )));
    }
    let used = &past[past.len() - n_trunc..];
    let mut orbit = vec![x; n_trunc + 1];
    for k in (0..n_trunc).rev() {
        orbit[k] = law.maps()[used[k]].inverse(orbit[k + 1])?;
    }
    let u = cones.unstable.bisector();
    let start = TorusPoint::from_vec(orbit[0].to_vec() - u * half_length);
    let mut curve = CurveJet::segment(start, u, 2.0 * half_length, spacing)?;
    for (step, &i) in used.iter().enumerate() {
        let map = &law.maps()[i];
        curve.refine_for(map);
        curve.apply_map(map, cones, step)?;
        let (t, _) = curve.project(orbit[step + 1]);
        curve.truncate_around(t, half_length);
    }
    let (base_t, d) = curve.project(x);
    if d > LEAF_TOLERANCE {
        return Err(LabError::NonConvergence { iterations: n_trunc, residual: d });
    }
    Ok(UnstableLeaf { curve, base_t, n_trunc })
}

/// `J_{w,x}(y)` with the bound on what the letters beyond `n_trunc` could change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityRatio {
    pub value: f64,
    pub log_value: f64,
    pub tail_bound: f64,
}

/// Bound on `|log J|` contributions from letters older than `n`, for points at distance `d`.
pub fn density_tail_bound(law: &GeneratorLaw, cert: &CertReport, d: f64, n: usize) -> f64 {
    let lu = cert.lambda_u_minus;
    let c2 = law.maps().iter().map(|m| m.sup_d2f()).fold(0.0, f64::max);
    let lip = c2 / lu;
    lip * cert.c0pp * d * lu.powi(-(n as i32)) / (1.0 - 1.0 / lu)
}

/// Density ratio along the unstable leaf through `x` for the past word `past`.
pub fn density_ratio(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    cert: &CertReport,
    past: &[usize],
    x: TorusPoint,
    y: TorusPoint,
    n_trunc: usize,
) -> Result<DensityRatio> {
    if x == y || law.is_linear() {
        return Ok(DensityRatio { value: 1.0, log_value: 0.0, tail_bound: 0.0 });
    }
    let leaf = unstable_leaf(law, cones, past, x, n_trunc, LEAF_HALF_LENGTH, LEAF_SPACING)?;
    let t = leaf.locate(y)?;
    let l = leaf.log_ratio_at(t);
    Ok(DensityRatio {
        value: l.exp(),
        log_value: l,
        tail_bound: density_tail_bound(law, cert, x.dist(y), n_trunc),
    })
}

/// Largest fitted log-density slope over `curves` pushes of straight unit-density
/// segments by independent words of length `n`, kept at `max_length`.
pub fn fit_lipschitz(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    n: usize,
    curves: usize,
    max_length: f64,
    seed: u64,
) -> Result<f64> {
    let fits: Vec<f64> = (0..curves)
        .into_par_iter()
        .map(|c| {
            let mut rng = task_rng(seed, c as u64);
            let start = TorusPoint::new(rng.gen(), rng.gen());
            let seg =
                CurveJet::segment(start, cones.unstable.bisector(), max_length, DEFAULT_SPACING)?;
            let word = law.sample_indices(n, &mut rng);
            let opts = PushOptions { resample: true, max_length: Some(max_length) };
            Ok(push_curve(law, cones, &seg, &word, opts)?.fitted_lipschitz())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fits.into_iter().fold(0.0, f64::max))
}
