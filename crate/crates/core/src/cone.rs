//! Constant cone fields, projective angles, and grid verification of the cone
//! conditions (C1)-(C4) for a family of maps.
//!
//! A cone is an open arc of line directions, stored as two boundary angles in [0, pi)
//! with the arc running counter-clockwise from `from` to `to`. Lines, not vectors: the
//! cone always contains `v` and `-v`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::torus::{line_angle, op_norm, unit_from_angle, Mat2, TorusMap, TorusPoint, Vec2};

/// Number of directions sampled per cone per grid point.
pub const DIRECTIONS_PER_CONE: usize = 4096;
/// Power-iteration depth used for the invariant line fields.
pub const POWER_ITERATION_DEPTH: usize = 40;
/// Coarsest admissible grid; the Lipschitz slack is always computed at this spacing.
pub const MIN_GRID: usize = 64;

/// Projective distance between two lines in [0, pi/2].
pub fn angle(u: Vec2, v: Vec2) -> Result<f64> {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(LabError::ZeroVector);
    }
    let cross = (u.x * v.y - u.y * v.x).abs();
    let dot = (u.x * v.x + u.y * v.y).abs();
    Ok(cross.atan2(dot))
}

/// Distance between two line angles (mod pi), in [0, pi/2].
pub fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// An open arc of directions in the projective line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub from: f64,
    pub to: f64,
}

impl Cone {
    /// Arc from the line of slope `s_from` counter-clockwise to the line of slope `s_to`.
    /// `None` stands for the vertical line.
    pub fn from_slopes(s_from: Option<f64>, s_to: Option<f64>) -> Result<Self> {
        let ang = |s: Option<f64>| match s {
            None => FRAC_PI_2,
            Some(s) => line_angle(Vec2::new(1.0, s)),
        };
        Self::from_angles(ang(s_from), ang(s_to))
    }

    pub fn from_angles(from: f64, to: f64) -> Result<Self> {
        let c = Cone { from: from.rem_euclid(PI), to: to.rem_euclid(PI) };
        let w = c.width();
        if !(w > 0.0 && w < PI) {
            return Err(LabError::InvalidCone(format!("degenerate cone width {w}")));
        }
        Ok(c)
    }

    pub fn width(&self) -> f64 {
        (self.to - self.from).rem_euclid(PI)
    }

    /// Position of angle `a` along the arc, measured from `from`, in [0, pi).
    fn offset(&self, a: f64) -> f64 {
        (a - self.from).rem_euclid(PI)
    }

    pub fn contains_angle(&self, a: f64) -> bool {
        let o = self.offset(a);
        o > 0.0 && o < self.width()
    }

    pub fn contains(&self, v: Vec2) -> bool {
        self.contains_angle(line_angle(v))
    }

    /// Signed angular distance to the boundary: positive inside, negative outside.
    pub fn margin_angle(&self, a: f64) -> f64 {
        let o = self.offset(a);
        let w = self.width();
        if o <= w {
            o.min(w - o)
        } else {
            -(o - w).min(PI - o)
        }
    }

    pub fn margin(&self, v: Vec2) -> f64 {
        self.margin_angle(line_angle(v))
    }

    pub fn bisector_angle(&self) -> f64 {
        (self.from + self.width() / 2.0).rem_euclid(PI)
    }

    pub fn bisector(&self) -> Vec2 {
        unit_from_angle(self.bisector_angle())
    }

    pub fn boundary(&self) -> [Vec2; 2] {
        [unit_from_angle(self.from), unit_from_angle(self.to)]
    }

    /// `n` unit directions spread over the closed arc, boundaries included.
    pub fn sample(&self, n: usize) -> Vec<Vec2> {
        let w = self.width();
        (0..n).map(|k| unit_from_angle(self.from + w * k as f64 / (n - 1).max(1) as f64)).collect()
    }

    /// Image of the closed arc under a linear map.
    pub fn image(&self, m: &Mat2) -> Arc {
        let [b0, b1] = self.boundary();
        let a = line_angle(m * b0);
        let b = line_angle(m * b1);
        let mid = line_angle(m * self.bisector());
        let cand = Arc { from: a, to: b };
        if cand.contains_closed(mid) {
            cand
        } else {
            Arc { from: b, to: a }
        }
    }

    pub fn as_arc(&self) -> Arc {
        Arc { from: self.from, to: self.to }
    }
}

/// A closed arc of line angles (counter-clockwise from `from` to `to`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub from: f64,
    pub to: f64,
}

impl Arc {
    pub fn width(&self) -> f64 {
        (self.to - self.from).rem_euclid(PI)
    }

    pub fn contains_closed(&self, a: f64) -> bool {
        (a - self.from).rem_euclid(PI) <= self.width() + 1e-15
    }

    /// Minimum projective distance between two closed arcs (0 when they meet).
    pub fn distance(&self, other: &Arc) -> f64 {
        if self.contains_closed(other.from)
            || self.contains_closed(other.to)
            || other.contains_closed(self.from)
            || other.contains_closed(self.to)
        {
            return 0.0;
        }
        [
            angle_between(self.from, other.from),
            angle_between(self.from, other.to),
            angle_between(self.to, other.from),
            angle_between(self.to, other.to),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }
}

/// `sqrt(v^T q v)`.
pub fn q_norm(q: &Mat2, v: Vec2) -> f64 {
    (v.dot(&(q * v))).max(0.0).sqrt()
}

/// Square root of the condition number of a symmetric positive-definite form.
pub fn metric_distortion(q: &Mat2) -> f64 {
    let tr = q[(0, 0)] + q[(1, 1)];
    let det = q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let hi = tr / 2.0 + disc;
    let lo = tr / 2.0 - disc;
    (hi / lo).sqrt()
}

fn is_spd(q: &Mat2) -> bool {
    let sym = (q[(0, 1)] - q[(1, 0)]).abs() <= 1e-12 * (1.0 + q[(0, 1)].abs());
    let det = q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)];
    sym && q[(0, 0)] > 0.0 && det > 0.0 && q.iter().all(|x| x.is_finite())
}

/// Stable and unstable cones with constant quadratic forms `q^s`, `q^u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSystem {
    pub stable: Cone,
    pub unstable: Cone,
    pub metric_s: Mat2,
    pub metric_u: Mat2,
}

impl ConeSystem {
    pub fn new(stable: Cone, unstable: Cone, metric_s: Mat2, metric_u: Mat2) -> Result<Self> {
        let s = Self { stable, unstable, metric_s, metric_u };
        s.validate()?;
        Ok(s)
    }

    /// Negative slopes for `C^s`, slopes in (0,1) for `C^u`, identity metrics.
    pub fn standard() -> Self {
        Self {
            stable: Cone::from_slopes(None, Some(0.0)).expect("valid cone"),
            unstable: Cone::from_slopes(Some(0.0), Some(1.0)).expect("valid cone"),
            metric_s: Mat2::identity(),
            metric_u: Mat2::identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("stable", &self.stable), ("unstable", &self.unstable)] {
            let w = c.width();
            if !(w > 0.0 && w < PI) {
                return Err(LabError::InvalidCone(format!("{name} cone has width {w}")));
            }
        }
        // open arcs overlap iff some interior point of one lies inside the other
        let (s, u) = (&self.stable, &self.unstable);
        let overlap = u.contains_angle(s.bisector_angle())
            || s.contains_angle(u.bisector_angle())
            || u.contains_angle(s.from + 1e-12)
            || u.contains_angle(s.to - 1e-12)
            || s.contains_angle(u.from + 1e-12)
            || s.contains_angle(u.to - 1e-12);
        if overlap {
            return Err(LabError::InvalidCone("stable and unstable cones overlap".into()));
        }
        if !is_spd(&self.metric_s) || !is_spd(&self.metric_u) {
            return Err(LabError::InvalidCone(
                "metrics must be symmetric positive definite".into(),
            ));
        }
        Ok(())
    }

    /// `C0''`: worst distortion between the q-norms and the Euclidean norm.
    pub fn c0pp(&self) -> f64 {
        metric_distortion(&self.metric_s).max(metric_distortion(&self.metric_u))
    }
}

/// Identifier of the four conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    C1,
    C2,
    C3,
    C4,
}

impl Condition {
    pub fn label(&self) -> &'static str {
        match self {
            Condition::C1 => "C1",
            Condition::C2 => "C2",
            Condition::C3 => "C3",
            Condition::C4 => "C4",
        }
    }
}

/// Where and why verification failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub point: TorusPoint,
    pub vector: Vec2,
    pub condition: Condition,
}

/// Certified constants and per-condition verdicts.
#[derive(Debug, Clone, PartialEq)]
pub struct CertReport {
    pub passed: [bool; 4],
    pub lambda_s_minus: f64,
    pub lambda_s_plus: f64,
    pub lambda_u_minus: f64,
    pub lambda_u_plus: f64,
    pub theta0: f64,
    pub theta_delta: f64,
    pub theta_delta_stable: f64,
    pub witness: Option<Witness>,
    pub grid_resolution: usize,
    /// Metric distortion `C0''`.
    pub c0pp: f64,
    /// Cone contraction constant `C4`.
    pub c4: f64,
    /// Lipschitz slack added to the rates.
    pub slack: f64,
}

impl CertReport {
    pub fn all_passed(&self) -> bool {
        self.passed.iter().all(|&p| p)
    }

    /// `lambda_s`, the strongest contraction rate.
    pub fn lambda_s(&self) -> f64 {
        self.lambda_s_minus
    }

    /// Projective contraction rate `lambda_{s,+} / lambda_{u,-}` of the cones.
    pub fn cone_ratio(&self) -> f64 {
        self.lambda_s_plus / self.lambda_u_minus
    }

    /// Bound on the angle between two lines of `C^u` after `n` steps.
    pub fn direction_error(&self, n: usize) -> f64 {
        self.c4 * self.cone_ratio().powi(n as i32)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (i, c) in
            [Condition::C1, Condition::C2, Condition::C3, Condition::C4].iter().enumerate()
        {
            let _ = writeln!(s, "passed_{}={}", c.label(), self.passed[i]);
        }
        let _ = writeln!(s, "passed={}", self.all_passed());
        let _ = writeln!(s, "lambda_s_minus={}", self.lambda_s_minus);
        let _ = writeln!(s, "lambda_s_plus={}", self.lambda_s_plus);
        let _ = writeln!(s, "lambda_u_minus={}", self.lambda_u_minus);
        let _ = writeln!(s, "lambda_u_plus={}", self.lambda_u_plus);
        let _ = writeln!(s, "theta0={}", self.theta0);
        let _ = writeln!(s, "theta_delta={}", self.theta_delta);
        let _ = writeln!(s, "theta_delta_stable={}", self.theta_delta_stable);
        let _ = writeln!(s, "c0pp={}", self.c0pp);
        let _ = writeln!(s, "c4={}", self.c4);
        let _ = writeln!(s, "slack={}", self.slack);
        let _ = writeln!(s, "grid_resolution={}", self.grid_resolution);
        match &self.witness {
            Some(w) => {
                let _ = writeln!(s, "witness_condition={}", w.condition.label());
                let _ = writeln!(s, "witness_x={}", w.point.x);
                let _ = writeln!(s, "witness_y={}", w.point.y);
                let _ = writeln!(s, "witness_vx={}", w.vector.x);
                let _ = writeln!(s, "witness_vy={}", w.vector.y);
            }
            None => {
                let _ = writeln!(s, "witness=none");
            }
        }
        s
    }
}

/// Per-grid-point extremes, for the optional CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRow {
    pub point: TorusPoint,
    pub min_u_ratio: f64,
    pub max_u_ratio: f64,
    pub min_s_ratio: f64,
    pub max_s_ratio: f64,
    pub theta_u: f64,
    pub theta_s: f64,
}

pub const GRID_CSV_HEADER: &str =
    "x,y,min_u_ratio,max_u_ratio,min_s_ratio,max_s_ratio,theta_u,theta_s";

impl GridRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.point.x,
            self.point.y,
            self.min_u_ratio,
            self.max_u_ratio,
            self.min_s_ratio,
            self.max_s_ratio,
            self.theta_u,
            self.theta_s
        )
    }
}

/// Unstable line of a single map at `x`: pull back, then push a cone line forward.
pub fn map_unstable_line(
    map: &TorusMap,
    cones: &ConeSystem,
    x: TorusPoint,
    depth: usize,
) -> Result<Vec2> {
    let mut v = cones.unstable.bisector();
    if map.is_linear() {
        let a = map.linear_part();
        for _ in 0..depth {
            v = a * v;
            v /= v.norm();
        }
        return Ok(v);
    }
    let mut orbit = Vec::with_capacity(depth);
    let mut p = x;
    for _ in 0..depth {
        p = map.inverse(p)?;
        orbit.push(p);
    }
    for q in orbit.iter().rev() {
        v = map.differential(*q) * v;
        v /= v.norm();
    }
    Ok(v)
}

/// Stable line of a single map at `x`: push forward, then pull a cone line back.
pub fn map_stable_line(map: &TorusMap, cones: &ConeSystem, x: TorusPoint, depth: usize) -> Vec2 {
    let mut v = cones.stable.bisector();
    if map.is_linear() {
        let a = map.linear_part_inverse();
        for _ in 0..depth {
            v = a * v;
            v /= v.norm();
        }
        return v;
    }
    let mut orbit = Vec::with_capacity(depth);
    let mut p = x;
    for _ in 0..depth {
        orbit.push(p);
        p = map.apply(p);
    }
    for q in orbit.iter().rev() {
        v = map.inverse_differential(*q) * v;
        v /= v.norm();
    }
    v
}

#[derive(Debug, Clone, Copy)]
struct MapExtremes {
    min_u: f64,
    max_u: f64,
    min_s: f64,
    max_s: f64,
    u_margin: f64,
    s_margin: f64,
    u_bad: Option<Vec2>,
    s_bad: Option<Vec2>,
}

impl MapExtremes {
    fn empty() -> Self {
        Self {
            min_u: f64::INFINITY,
            max_u: 0.0,
            min_s: f64::INFINITY,
            max_s: 0.0,
            u_margin: f64::INFINITY,
            s_margin: f64::INFINITY,
            u_bad: None,
            s_bad: None,
        }
    }

    fn merge(&mut self, o: &MapExtremes) {
        self.min_u = self.min_u.min(o.min_u);
        self.max_u = self.max_u.max(o.max_u);
        self.min_s = self.min_s.min(o.min_s);
        self.max_s = self.max_s.max(o.max_s);
        self.u_margin = self.u_margin.min(o.u_margin);
        self.s_margin = self.s_margin.min(o.s_margin);
    }
}

struct PointResult {
    point: TorusPoint,
    per_map: Vec<MapExtremes>,
    theta0: f64,
    theta_u: f64,
    theta_s: f64,
    eu: Vec<Vec2>,
    es: Vec<Vec2>,
}

/// Precomputed quadratic monomials of the sampled directions.
struct DirTable {
    c2: Vec<f64>,
    cs2: Vec<f64>,
    s2: Vec<f64>,
    inv_den: Vec<f64>,
}

impl DirTable {
    fn new(cone: &Cone, q: &Mat2) -> Self {
        let dirs = cone.sample(DIRECTIONS_PER_CONE);
        let mut t = DirTable { c2: vec![], cs2: vec![], s2: vec![], inv_den: vec![] };
        for v in dirs {
            t.c2.push(v.x * v.x);
            t.cs2.push(2.0 * v.x * v.y);
            t.s2.push(v.y * v.y);
            t.inv_den.push(1.0 / v.dot(&(q * v)));
        }
        t
    }

    /// min and max of `|M v|_q / |v|_q` over the table.
    fn extremes(&self, m: &Mat2, q: &Mat2) -> (f64, f64) {
        let g = m.transpose() * q * m;
        let (g11, g12, g22) = (g[(0, 0)], 0.5 * (g[(0, 1)] + g[(1, 0)]), g[(1, 1)]);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for k in 0..self.c2.len() {
            let r = (g11 * self.c2[k] + g12 * self.cs2[k] + g22 * self.s2[k]) * self.inv_den[k];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo.sqrt(), hi.sqrt())
    }
}

fn smallest_singular(m: &Mat2) -> f64 {
    let d = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).abs();
    d / op_norm(m)
}

/// Grid verification of (C1)-(C4). Returns the report and the per-point rows.
pub fn certify_with_rows(
    maps: &[TorusMap],
    cones: &ConeSystem,
    grid_n: usize,
) -> Result<(CertReport, Vec<GridRow>)> {
    cones.validate()?;
    if grid_n < MIN_GRID {
        return Err(LabError::InvalidArgument(format!(
            "grid_n must be >= {MIN_GRID}, got {grid_n}"
        )));
    }
    if maps.is_empty() {
        return Err(LabError::InvalidArgument("need at least one map".into()));
    }
    let c0pp = cones.c0pp();
    let c4 = PI * c0pp.powi(4);
    let h0 = std::f64::consts::SQRT_2 / 2.0 / MIN_GRID as f64;
    let slack_u: Vec<f64> =
        maps.iter().map(|m| metric_distortion(&cones.metric_u) * m.sup_d2f() * h0).collect();
    let slack_s: Vec<f64> = maps
        .iter()
        .map(|m| {
            // x -> Df(x)^-1 is Lipschitz with constant sup|Df^-1|^2 sup|D^2 f|
            let c = m.sup_dfinv();
            metric_distortion(&cones.metric_s) * c * c * m.sup_d2f() * h0
        })
        .collect();
    let tab_u = DirTable::new(&cones.unstable, &cones.metric_u);
    let tab_s = DirTable::new(&cones.stable, &cones.metric_s);
    let u_arc = cones.unstable;
    let s_arc = cones.stable;

    // linear maps have constant invariant lines; compute them once
    let linear_eu: Vec<Option<Vec2>> = maps
        .iter()
        .map(|m| {
            m.is_linear()
                .then(|| {
                    map_unstable_line(m, cones, TorusPoint::new(0.0, 0.0), POWER_ITERATION_DEPTH)
                })
                .transpose()
        })
        .collect::<Result<_>>()?;
    let linear_es: Vec<Option<Vec2>> = maps
        .iter()
        .map(|m| {
            m.is_linear().then(|| {
                map_stable_line(m, cones, TorusPoint::new(0.0, 0.0), POWER_ITERATION_DEPTH)
            })
        })
        .collect();

    let eval_point = |i: usize, j: usize| -> Result<PointResult> {
        let p = TorusPoint::new(i as f64 / grid_n as f64, j as f64 / grid_n as f64);
        let mut per_map = Vec::with_capacity(maps.len());
        let mut u_images = Vec::with_capacity(maps.len());
        let mut s_images = Vec::with_capacity(maps.len());
        let mut eu = Vec::with_capacity(maps.len());
        let mut es = Vec::with_capacity(maps.len());
        let mut ang_slack = 0.0f64;
        for (h, map) in maps.iter().enumerate() {
            let m = map.differential(p);
            let minv = crate::torus::inv2(&m);
            let mut ex = MapExtremes::empty();
            let slack_ang = map.sup_d2f() * h0 / smallest_singular(&m);
            let slack_ang_inv =
                map.sup_d2f() * h0 * op_norm(&minv).powi(2) / smallest_singular(&minv);
            ang_slack = ang_slack.max(slack_ang).max(slack_ang_inv);
            for b in u_arc.boundary() {
                let img = m * b;
                let mg = u_arc.margin(img) - slack_ang;
                if mg <= 0.0 && ex.u_bad.is_none() {
                    ex.u_bad = Some(b);
                }
                ex.u_margin = ex.u_margin.min(mg);
            }
            for b in s_arc.boundary() {
                let img = minv * b;
                let mg = s_arc.margin(img) - slack_ang_inv;
                if mg <= 0.0 && ex.s_bad.is_none() {
                    ex.s_bad = Some(b);
                }
                ex.s_margin = ex.s_margin.min(mg);
            }
            let (lo, hi) = tab_u.extremes(&m, &cones.metric_u);
            ex.min_u = lo - slack_u[h];
            ex.max_u = hi + slack_u[h];
            let (lo, hi) = tab_s.extremes(&minv, &cones.metric_s);
            ex.min_s = lo - slack_s[h];
            ex.max_s = hi + slack_s[h];
            per_map.push(ex);
            u_images.push(u_arc.image(&m));
            s_images.push(s_arc.image(&minv));
            eu.push(match linear_eu[h] {
                Some(v) => v,
                None => map_unstable_line(map, cones, p, POWER_ITERATION_DEPTH)?,
            });
            es.push(match linear_es[h] {
                Some(v) => v,
                None => map_stable_line(map, cones, p, POWER_ITERATION_DEPTH),
            });
        }
        let mut theta0 = f64::INFINITY;
        for a in &u_images {
            for b in &s_images {
                theta0 = theta0.min(a.distance(b) - ang_slack);
            }
        }
        let mut theta_u = f64::INFINITY;
        let mut theta_s = f64::INFINITY;
        for a in 0..maps.len() {
            for b in (a + 1)..maps.len() {
                theta_u = theta_u.min(angle(eu[a], eu[b])?);
                theta_s = theta_s.min(angle(es[a], es[b])?);
            }
        }
        if maps.len() == 1 {
            theta_u = 0.0;
            theta_s = 0.0;
        }
        Ok(PointResult { point: p, per_map, theta0, theta_u, theta_s, eu, es })
    };

    let rows: Vec<Vec<PointResult>> = (0..grid_n)
        .into_par_iter()
        .map(|i| (0..grid_n).map(|j| eval_point(i, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;

    let mut per_map_total = vec![MapExtremes::empty(); maps.len()];
    let mut theta0 = f64::INFINITY;
    let mut theta_delta = f64::INFINITY;
    let mut theta_delta_s = f64::INFINITY;
    let mut witness_c1: Option<Witness> = None;
    let mut witness_c3: Option<Witness> = None;
    let mut witness_c4: Option<Witness> = None;
    let mut grid_rows = Vec::with_capacity(grid_n * grid_n);
    for pr in rows.iter().flatten() {
        for (h, ex) in pr.per_map.iter().enumerate() {
            per_map_total[h].merge(ex);
            if witness_c1.is_none() {
                if let Some(v) = ex.u_bad.or(ex.s_bad) {
                    witness_c1 =
                        Some(Witness { point: pr.point, vector: v, condition: Condition::C1 });
                }
            }
        }
        theta0 = theta0.min(pr.theta0);
        if pr.theta_u < theta_delta {
            theta_delta = pr.theta_u;
        }
        if pr.theta_s < theta_delta_s {
            theta_delta_s = pr.theta_s;
        }
        if witness_c3.is_none() && pr.theta_u <= 0.0 {
            witness_c3 =
                Some(Witness { point: pr.point, vector: pr.eu[0], condition: Condition::C3 });
        }
        if witness_c4.is_none() && pr.theta_s <= 0.0 {
            witness_c4 =
                Some(Witness { point: pr.point, vector: pr.es[0], condition: Condition::C4 });
        }
        let agg = pr.per_map.iter().fold(MapExtremes::empty(), |mut a, e| {
            a.merge(e);
            a
        });
        grid_rows.push(GridRow {
            point: pr.point,
            min_u_ratio: agg.min_u,
            max_u_ratio: agg.max_u,
            min_s_ratio: agg.min_s,
            max_s_ratio: agg.max_s,
            theta_u: pr.theta_u,
            theta_s: pr.theta_s,
        });
    }

    let mut all = MapExtremes::empty();
    for e in &per_map_total {
        all.merge(e);
    }
    let lambda_u_minus = all.min_u;
    let lambda_u_plus = all.max_u;
    let lambda_s_plus = 1.0 / all.min_s;
    let lambda_s_minus = 1.0 / all.max_s;

    // (C1): each map is hyperbolic through the cone criterion on its own
    let c1 = per_map_total
        .iter()
        .all(|e| e.u_margin > 0.0 && e.s_margin > 0.0 && e.min_u > 1.0 && e.min_s > 1.0);
    // (C2): common cones with ordered joint rates
    let ordered = 0.0 < lambda_s_minus
        && lambda_s_minus < lambda_s_plus
        && lambda_s_plus < 1.0
        && 1.0 < lambda_u_minus
        && lambda_u_minus < lambda_u_plus;
    let c2 = c1 && ordered && theta0 > 0.0;
    let ratio = lambda_s_plus / lambda_u_minus;
    let dir_err =
        if ratio < 1.0 { 2.0 * c4 * ratio.powi(POWER_ITERATION_DEPTH as i32) } else { PI };
    let c3 = maps.len() > 1 && theta_delta > dir_err;
    let c4_ok = maps.len() > 1 && theta_delta_s > dir_err;

    let mut witness = None;
    if !c1 {
        witness = witness_c1.or(Some(Witness {
            point: TorusPoint::new(0.0, 0.0),
            vector: cones.unstable.bisector(),
            condition: Condition::C1,
        }));
    } else if !c2 {
        witness = Some(Witness {
            point: TorusPoint::new(0.0, 0.0),
            vector: cones.unstable.bisector(),
            condition: Condition::C2,
        });
    } else if !c3 {
        witness =
            witness_c3.or_else(|| {
                rows.iter().flatten().min_by(|a, b| a.theta_u.total_cmp(&b.theta_u)).map(|pr| {
                    Witness { point: pr.point, vector: pr.eu[0], condition: Condition::C3 }
                })
            });
    } else if !c4_ok {
        witness =
            witness_c4.or_else(|| {
                rows.iter().flatten().min_by(|a, b| a.theta_s.total_cmp(&b.theta_s)).map(|pr| {
                    Witness { point: pr.point, vector: pr.es[0], condition: Condition::C4 }
                })
            });
    }

    let report = CertReport {
        passed: [c1, c2, c3, c4_ok],
        lambda_s_minus,
        lambda_s_plus,
        lambda_u_minus,
        lambda_u_plus,
        theta0,
        theta_delta,
        theta_delta_stable: theta_delta_s,
        witness,
        grid_resolution: grid_n,
        c0pp,
        c4,
        slack: slack_u.iter().chain(slack_s.iter()).fold(0.0, |a: f64, &b| a.max(b)),
    };
    Ok((report, grid_rows))
}

/// Grid verification of (C1)-(C4) for the given maps.
pub fn certify(maps: &[TorusMap], cones: &ConeSystem, grid_n: usize) -> Result<CertReport> {
    certify_with_rows(maps, cones, grid_n).map(|(r, _)| r)
}
