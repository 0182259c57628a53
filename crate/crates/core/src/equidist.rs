//! Birkhoff averages of Dirac masses against a reference stationary measure, and
//! periodic points shared by two maps.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::measure::{coarse_distance, coarse_grain, grid_index, GridMeasure, TorusMeasure};
use crate::random_system::{task_rng, GeneratorLaw, ENUMERATION_LIMIT};
use crate::torus::{det2, inv2, Mat2, TorusMap, TorusPoint, Vec2};

pub const EQUIDIST_CSV_HEADER: &str = "n,distance";
pub const PERIODIC_CSV_HEADER: &str = "n,count_f,count_g,common,x,y";
/// Largest period [`common_periodic_points`] accepts.
pub const MAX_PERIOD: usize = 12;
/// Residual below which a point counts as fixed by a perturbed power.
pub const FIXED_POINT_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 60;

/// Coarse distances of `(1/n) sum_{j<n} mu^{*j} * delta_x0` to a reference measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EquidistRun {
    pub x0: TorusPoint,
    pub checkpoints: Vec<usize>,
    pub distances: Vec<f64>,
    pub resolution: usize,
}

impl EquidistRun {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(EQUIDIST_CSV_HEADER);
        s.push('\n');
        for (n, d) in self.checkpoints.iter().zip(&self.distances) {
            let _ = writeln!(s, "{n},{d}");
        }
        s
    }
}

/// Follows `words` independent orbits of `x0` and compares the Cesàro averages at each
/// checkpoint with `reference`, coarse-grained to `resolution` cells per axis.
pub fn equidistribution_run(
    law: &GeneratorLaw,
    x0: TorusPoint,
    checkpoints: &[usize],
    words: usize,
    resolution: usize,
    reference: &GridMeasure,
    seed: u64,
) -> Result<EquidistRun> {
    if checkpoints.is_empty() || checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(LabError::InvalidArgument(
            "checkpoints must be positive and strictly increasing".into(),
        ));
    }
    if words == 0 || resolution == 0 {
        return Err(LabError::InvalidArgument("words and resolution must be positive".into()));
    }
    let cells = resolution * resolution;
    let n_max = *checkpoints.last().expect("nonempty");
    // integer counts: the merge is exact, so the result does not depend on scheduling
    let counts = (0..words)
        .into_par_iter()
        .fold(
            || vec![0u64; checkpoints.len() * cells],
            |mut acc, k| {
                let mut rng = task_rng(seed, k as u64);
                let mut q = x0;
                let mut c = 0;
                for j in 0..n_max {
                    while checkpoints[c] <= j {
                        c += 1;
                    }
                    acc[c * cells + grid_index(resolution, q)] += 1;
                    q = law.maps()[law.sample_index(&mut rng)].apply(q);
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; checkpoints.len() * cells],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let reference = TorusMeasure::Grid(reference.clone());
    let mut cumulative = vec![0u64; cells];
    let mut distances = Vec::with_capacity(checkpoints.len());
    for c in 0..checkpoints.len() {
        cumulative.iter_mut().zip(&counts[c * cells..(c + 1) * cells]).for_each(|(x, y)| *x += y);
        let empirical = TorusMeasure::Grid(GridMeasure::from_counts(resolution, &cumulative)?);
        distances.push(coarse_distance(&empirical, &reference, resolution)?);
    }
    Ok(EquidistRun { x0, checkpoints: checkpoints.to_vec(), distances, resolution })
}

/// Smallest cell mass of the normalized coarse-graining (positive means full support at
/// this resolution).
pub fn min_cell_mass(nu: &GridMeasure, resolution: usize) -> Result<f64> {
    let p = coarse_grain(&TorusMeasure::Grid(nu.clone()), resolution)?;
    Ok(p.into_iter().fold(f64::INFINITY, f64::min))
}

/// Fixed points of `f^n` and `g^n` for one `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRow {
    pub n: usize,
    /// `|det(F^n - I)|`, the number of fixed points of `f^n`.
    pub count_f: u128,
    pub count_g: u128,
    pub common: Vec<TorusPoint>,
}

/// A candidate whose Newton refinement failed, with the map (0 for `f`, 1 for `g`) and
/// the period.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedCandidate {
    pub map: usize,
    pub n: usize,
    pub error: LabError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicReport {
    pub rows: Vec<PeriodRow>,
    pub dropped: Vec<DroppedCandidate>,
}

impl PeriodicReport {
    /// One line per common point; periods without common points get an empty point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(PERIODIC_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            if r.common.is_empty() {
                let _ = writeln!(s, "{},{},{},0,,", r.n, r.count_f, r.count_g);
            }
            for p in &r.common {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    r.n,
                    r.count_f,
                    r.count_g,
                    r.common.len(),
                    p.x,
                    p.y
                );
            }
        }
        s
    }
}

type IMat = [[i128; 2]; 2];

fn imul(a: &IMat, b: &IMat) -> IMat {
    let mut c = [[0i128; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn ipow(m: [[i64; 2]; 2], n: usize) -> IMat {
    let a = [[m[0][0] as i128, m[0][1] as i128], [m[1][0] as i128, m[1][1] as i128]];
    let mut p = [[1, 0], [0, 1]];
    for _ in 0..n {
        p = imul(&a, &p);
    }
    p
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a.rem_euclid(b))
    }
}

/// Fixed points of `x -> M x` mod 1 for `M = F^n`, as integer numerators over the common
/// denominator `D = |det(M - I)|`.
///
/// The lattice `(M - I) Z^2` is put in the lower-triangular form `[[a, 0], [e, h]]` by
/// column operations; `(i, j)` with `0 <= i < a`, `0 <= j < |h|` then runs over
/// `Z^2 / (M - I) Z^2`, and `x = (M - I)^-1 (i, j)`.
fn linear_fixed_points(m: &IMat) -> Result<(i128, Vec<[i128; 2]>)> {
    let k = [[m[0][0] - 1, m[0][1]], [m[1][0], m[1][1] - 1]];
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    if det == 0 {
        return Err(LabError::InvalidMap("power has eigenvalue 1".into()));
    }
    let d = det.abs();
    if d as u128 > ENUMERATION_LIMIT {
        return Err(LabError::EnumerationTooLarge { count: d as u128, limit: ENUMERATION_LIMIT });
    }
    // with u k00 + v k01 = g, the columns u c1 + v c2 and (-k01/g) c1 + (k00/g) c2 have
    // first row (g, 0)
    let g = gcd(k[0][0], k[0][1]);
    let a = g;
    let h = (-k[0][1] / g) * k[1][0] + (k[0][0] / g) * k[1][1];
    // adj(K) = [[k11, -k01], [-k10, k00]], K^-1 = adj / det
    let adj = [[k[1][1], -k[0][1]], [-k[1][0], k[0][0]]];
    let sign = det.signum();
    let mut pts = Vec::with_capacity(d as usize);
    for i in 0..a {
        for j in 0..h.abs() {
            let px = (sign * (adj[0][0] * i + adj[0][1] * j)).rem_euclid(d);
            let py = (sign * (adj[1][0] * i + adj[1][1] * j)).rem_euclid(d);
            pts.push([px, py]);
        }
    }
    pts.sort_unstable();
    pts.dedup();
    Ok((d, pts))
}

/// Lifted image of `x` under `f^n` and the derivative along the way.
fn power_with_derivative(f: &TorusMap, x: Vec2, n: usize) -> (Vec2, Mat2) {
    let mut y = x;
    let mut m = Mat2::identity();
    for _ in 0..n {
        m = f.differential_lift(y) * m;
        y = f.apply_lift(y);
    }
    (y, m)
}

/// Newton iteration for `f^n(x) = x` mod 1 from `x0`. Fails when it does not converge or
/// leaves the ball of radius `radius` around the candidate.
fn refine_fixed_point(f: &TorusMap, n: usize, x0: Vec2, radius: f64) -> Result<Vec2> {
    let mut x = x0;
    for _ in 0..NEWTON_MAX_ITER {
        let (y, m) = power_with_derivative(f, x, n);
        let r = y - x;
        let r = r - Vec2::new(r.x.round(), r.y.round());
        if r.norm() < FIXED_POINT_TOL {
            return Ok(Vec2::new(x.x.rem_euclid(1.0), x.y.rem_euclid(1.0)));
        }
        let j = m - Mat2::identity();
        if det2(&j).abs() < 1e-300 {
            break;
        }
        x -= inv2(&j) * r;
        if (x - x0).norm() > radius {
            break;
        }
    }
    Err(LabError::NewtonDivergence { x: x0.x, y: x0.y })
}

/// Fixed points of `f^n`: exact for linear maps, Newton-refined from the linear
/// candidates otherwise. Returns the points and the candidates that were dropped.
fn fixed_points(f: &TorusMap, n: usize) -> Result<(Vec<TorusPoint>, Vec<LabError>)> {
    let (d, num) = linear_fixed_points(&ipow(f.matrix(), n))?;
    let df = d as f64;
    let candidates: Vec<Vec2> =
        num.iter().map(|p| Vec2::new(p[0] as f64 / df, p[1] as f64 / df)).collect();
    if f.is_linear() {
        return Ok((candidates.into_iter().map(TorusPoint::from_vec).collect(), Vec::new()));
    }
    // candidates are spaced about 1/sqrt(D) apart
    let radius = 0.5 / df.sqrt();
    let refined: Vec<Result<Vec2>> =
        candidates.par_iter().map(|&c| refine_fixed_point(f, n, c, radius)).collect();
    let mut points: Vec<TorusPoint> = Vec::with_capacity(refined.len());
    let mut dropped = Vec::new();
    // two candidates converging to one point: keep the first, flag the second
    const KEY: f64 = 1e8;
    let mut seen = HashSet::new();
    let key = |v: f64, o: i64| ((v * KEY).round() as i64 + o).rem_euclid(KEY as i64);
    for (c, r) in candidates.iter().zip(refined) {
        match r {
            Ok(x) => {
                let p = TorusPoint::from_vec(x);
                let taken =
                    (-1..=1).any(|a| (-1..=1).any(|b| seen.contains(&(key(p.x, a), key(p.y, b)))));
                if taken {
                    dropped.push(LabError::NewtonDivergence { x: c.x, y: c.y });
                } else {
                    seen.insert((key(p.x, 0), key(p.y, 0)));
                    points.push(p);
                }
            }
            Err(e) => dropped.push(e),
        }
    }
    Ok((points, dropped))
}

fn count(f: &TorusMap, n: usize) -> u128 {
    let m = ipow(f.matrix(), n);
    ((m[0][0] - 1) * (m[1][1] - 1) - m[0][1] * m[1][0]).unsigned_abs()
}

/// True when `g^n` fixes `p` (exactly, through the rational representation, when both
/// maps are linear).
fn is_fixed(g: &TorusMap, n: usize, p: TorusPoint) -> bool {
    let (y, _) = power_with_derivative(g, p.to_vec(), n);
    let r = y - p.to_vec();
    (r - Vec2::new(r.x.round(), r.y.round())).norm() < 1e-9
}

/// Common fixed points of `f^n` and `g^n` for `n = 1..=period_max`.
///
/// The map with fewer fixed points is enumerated and each point is tested against the
/// other. For two linear maps the test is exact in integer arithmetic.
pub fn common_periodic_points(
    f: &TorusMap,
    g: &TorusMap,
    period_max: usize,
) -> Result<PeriodicReport> {
    if period_max == 0 || period_max > MAX_PERIOD {
        return Err(LabError::InvalidArgument(format!("period_max must be in 1..={MAX_PERIOD}")));
    }
    let mut rows = Vec::with_capacity(period_max);
    let mut dropped = Vec::new();
    for n in 1..=period_max {
        let (cf, cg) = (count(f, n), count(g, n));
        let (small, other, which) = if cf <= cg { (f, g, 0) } else { (g, f, 1) };
        let common = if f.is_linear() && g.is_linear() {
            let (d, num) = linear_fixed_points(&ipow(small.matrix(), n))?;
            let m = ipow(other.matrix(), n);
            num.into_iter()
                .filter(|p| {
                    let x = (m[0][0] - 1) * p[0] + m[0][1] * p[1];
                    let y = m[1][0] * p[0] + (m[1][1] - 1) * p[1];
                    x.rem_euclid(d) == 0 && y.rem_euclid(d) == 0
                })
                .map(|p| TorusPoint::new(p[0] as f64 / d as f64, p[1] as f64 / d as f64))
                .collect()
        } else {
            let (pts, lost) = fixed_points(small, n)?;
            dropped.extend(lost.into_iter().map(|error| DroppedCandidate { map: which, n, error }));
            pts.into_iter().filter(|&p| is_fixed(other, n, p)).collect()
        };
        rows.push(PeriodRow { n, count_f: cf, count_g: cg, common });
    }
    Ok(PeriodicReport { rows, dropped })
}

/// All fixed points of `f^n` (see [`common_periodic_points`] for the method).
pub fn periodic_points(f: &TorusMap, n: usize) -> Result<(Vec<TorusPoint>, Vec<LabError>)> {
    if n == 0 || n > MAX_PERIOD {
        return Err(LabError::InvalidArgument(format!("period must be in 1..={MAX_PERIOD}")));
    }
    fixed_points(f, n)
}
