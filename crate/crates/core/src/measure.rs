//! Finite measures on the torus, ball-mass queries, the rho-inner product and
//! rho-semi-norm, convolution powers, stationary-measure estimation and coarse
//! total-variation distances.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::CurveJet;
use crate::error::{LabError, Result};
use crate::random_system::{task_rng, GeneratorLaw};
use crate::torus::TorusPoint;

/// Grid cells must be at most `rho / CELLS_PER_RADIUS` wide for ball queries.
pub const CELLS_PER_RADIUS: f64 = 8.0;
/// Default transient discarded by `estimate_stationary`.
pub const DEFAULT_BURN_IN: usize = 100;
/// Number of independent partial histograms; fixed so that merging is order independent.
const HISTOGRAM_CHUNKS: usize = 64;

fn check_radius(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 0.25) {
        return Err(LabError::InvalidArgument(format!("radius {rho} must lie in (0, 1/4)")));
    }
    Ok(())
}

/// Anything that can report the mass of a closed flat-torus ball.
pub trait BallMass {
    fn ball_mass(&self, z: TorusPoint, rho: f64) -> Result<f64>;
    fn total(&self) -> f64;
}

/// Histogram measure; cell `(i, j)` covers `[i/n, (i+1)/n) x [j/n, (j+1)/n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    n: usize,
    mass: Vec<f64>,
    total: f64,
    /// Per-row prefix sums, `n + 1` entries per row.
    prefix: Vec<f64>,
}

impl GridMeasure {
    pub fn from_masses(n: usize, mass: Vec<f64>) -> Result<Self> {
        if n == 0 || mass.len() != n * n {
            return Err(LabError::InvalidArgument(format!("need {} masses for grid {n}", n * n)));
        }
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(LabError::InvalidArgument(
                "cell masses must be finite and non-negative".into(),
            ));
        }
        let mut prefix = vec![0.0; n * (n + 1)];
        for i in 0..n {
            let row = &mass[i * n..(i + 1) * n];
            let p = &mut prefix[i * (n + 1)..(i + 1) * (n + 1)];
            for j in 0..n {
                p[j + 1] = p[j] + row[j];
            }
        }
        let total = mass.iter().sum();
        Ok(Self { n, mass, total, prefix })
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_masses(n, vec![0.0; n * n]).expect("valid grid")
    }

    /// Lebesgue measure (uniform cells of mass `1/n^2`).
    pub fn lebesgue(n: usize) -> Self {
        Self::from_masses(n, vec![1.0 / (n * n) as f64; n * n]).expect("valid grid")
    }

    /// Cell masses proportional to a density sampled at cell centers, total 1.
    pub fn from_density(n: usize, density: impl Fn(TorusPoint) -> f64) -> Result<Self> {
        let mut mass = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                mass.push(density(cell_center(n, i, j)).max(0.0));
            }
        }
        let t: f64 = mass.iter().sum();
        if t <= 0.0 {
            return Err(LabError::InvalidArgument("density has no mass".into()));
        }
        mass.iter_mut().for_each(|m| *m /= t);
        Self::from_masses(n, mass)
    }

    /// Normalized histogram from integer counts.
    pub fn from_counts(n: usize, counts: &[u64]) -> Result<Self> {
        let t: u64 = counts.iter().sum();
        if t == 0 {
            return Err(LabError::InvalidArgument("empty histogram".into()));
        }
        Self::from_masses(n, counts.iter().map(|&c| c as f64 / t as f64).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.n + j]
    }

    /// Same measure scaled to total mass 1.
    pub fn normalized(&self) -> Result<Self> {
        if self.total <= 0.0 {
            return Err(LabError::InvalidArgument("cannot normalize the zero measure".into()));
        }
        Self::from_masses(self.n, self.mass.iter().map(|m| m / self.total).collect())
    }

    /// Row mass on `[0, t)` in cell units, extended periodically (`t` may be negative or above n).
    fn row_cumulative(&self, i: usize, t: f64) -> f64 {
        let n = self.n as f64;
        let wraps = (t / n).floor();
        let u = t - wraps * n;
        let k = (u as usize).min(self.n - 1);
        let p = &self.prefix[i * (self.n + 1)..(i + 1) * (self.n + 1)];
        wraps * p[self.n] + p[k] + (u - k as f64) * self.mass[i * self.n + k]
    }

    /// CSV: first line `n`, then rows `i,j,mass`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.n * self.n * 24);
        let _ = writeln!(s, "{}", self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let _ = writeln!(s, "{i},{j},{}", self.cell(i, j));
            }
        }
        s
    }

    /// Plain (P2) portable graymap, `y` increasing upwards.
    pub fn to_pgm(&self) -> String {
        let max = self.mass.iter().cloned().fold(0.0f64, f64::max);
        let mut s = format!("P2\n{} {}\n255\n", self.n, self.n);
        for j in (0..self.n).rev() {
            let row: Vec<String> = (0..self.n)
                .map(|i| {
                    let v = if max > 0.0 { self.cell(i, j) / max } else { 0.0 };
                    ((v * 255.0).round() as u32).to_string()
                })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Treat every non-empty cell as an atom at its center.
    pub fn to_cloud(&self) -> Result<PointCloudMeasure> {
        let mut pts = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let m = self.cell(i, j);
                if m > 0.0 {
                    pts.push((cell_center(self.n, i, j), m));
                }
            }
        }
        PointCloudMeasure::new(pts)
    }
}

pub fn cell_center(n: usize, i: usize, j: usize) -> TorusPoint {
    TorusPoint::new((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64)
}

impl BallMass for GridMeasure {
    /// Rows are selected by their center abscissa; within a row the chord of the ball is
    /// integrated exactly against the piecewise-constant density.
    fn ball_mass(&self, z: TorusPoint, rho: f64) -> Result<f64> {
        check_radius(rho)?;
        let nf = self.n as f64;
        let cell = 1.0 / nf;
        if cell > rho / CELLS_PER_RADIUS {
            return Err(LabError::ResolutionTooCoarse { cell, rho });
        }
        let i_lo = ((z.x - rho) * nf - 0.5).ceil() as i64;
        let i_hi = ((z.x + rho) * nf - 0.5).floor() as i64;
        let mut sum = 0.0;
        for ii in i_lo..=i_hi {
            let dx = (ii as f64 + 0.5) / nf - z.x;
            let w2 = rho * rho - dx * dx;
            if w2 <= 0.0 {
                continue;
            }
            let w = w2.sqrt();
            let i = ii.rem_euclid(self.n as i64) as usize;
            sum += self.row_cumulative(i, (z.y + w) * nf) - self.row_cumulative(i, (z.y - w) * nf);
        }
        Ok(sum.max(0.0))
    }

    fn total(&self) -> f64 {
        self.total
    }
}

/// Weighted atoms with a uniform-cell spatial index (CSR layout).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudMeasure {
    points: Vec<(TorusPoint, f64)>,
    cells: usize,
    cell_start: Vec<usize>,
    order: Vec<usize>,
    total: f64,
}

impl PointCloudMeasure {
    pub fn new(points: Vec<(TorusPoint, f64)>) -> Result<Self> {
        let cells = ((points.len() as f64 / 2.0).sqrt().ceil() as usize).clamp(4, 512);
        Self::with_cells(points, cells)
    }

    /// Index with `cells x cells` buckets of side `h = 1/cells`.
    pub fn with_cells(points: Vec<(TorusPoint, f64)>, cells: usize) -> Result<Self> {
        if points.iter().any(|(_, w)| !(w.is_finite() && *w > 0.0)) {
            return Err(LabError::InvalidArgument("atom weights must be positive".into()));
        }
        let cells = cells.max(1);
        let key = |p: &TorusPoint| {
            let cx = ((p.x * cells as f64) as usize).min(cells - 1);
            let cy = ((p.y * cells as f64) as usize).min(cells - 1);
            cx * cells + cy
        };
        let mut counts = vec![0usize; cells * cells + 1];
        for (p, _) in &points {
            counts[key(p) + 1] += 1;
        }
        for k in 0..cells * cells {
            counts[k + 1] += counts[k];
        }
        let cell_start = counts.clone();
        let mut fill = counts;
        let mut order = vec![0usize; points.len()];
        for (idx, (p, _)) in points.iter().enumerate() {
            let k = key(p);
            order[fill[k]] = idx;
            fill[k] += 1;
        }
        let total = points.iter().map(|(_, w)| w).sum();
        Ok(Self { points, cells, cell_start, order, total })
    }

    pub fn dirac(p: TorusPoint) -> Self {
        Self::new(vec![(p, 1.0)]).expect("valid atom")
    }

    pub fn points(&self) -> &[(TorusPoint, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Visit every atom within distance `r` of `z` (any `r < 1/2`).
    pub fn for_each_within(&self, z: TorusPoint, r: f64, mut f: impl FnMut(usize, f64)) {
        let c = self.cells as i64;
        let cf = self.cells as f64;
        let span = |u: f64| {
            let lo = ((u - r) * cf).floor() as i64;
            let hi = ((u + r) * cf).floor() as i64;
            (lo, (hi - lo + 1).min(c))
        };
        let (xlo, xn) = span(z.x);
        let (ylo, yn) = span(z.y);
        for a in 0..xn {
            let cx = (xlo + a).rem_euclid(c) as usize;
            for b in 0..yn {
                let cy = (ylo + b).rem_euclid(c) as usize;
                let k = cx * self.cells + cy;
                for &idx in &self.order[self.cell_start[k]..self.cell_start[k + 1]] {
                    let d = self.points[idx].0.dist(z);
                    if d <= r {
                        f(idx, d);
                    }
                }
            }
        }
    }

    /// Coarse-grained histogram on an `n x n` grid.
    pub fn to_grid(&self, n: usize) -> Result<GridMeasure> {
        let mut mass = vec![0.0; n * n];
        for (p, w) in &self.points {
            mass[grid_index(n, *p)] += w;
        }
        GridMeasure::from_masses(n, mass)
    }
}

impl BallMass for PointCloudMeasure {
    fn ball_mass(&self, z: TorusPoint, rho: f64) -> Result<f64> {
        check_radius(rho)?;
        let mut s = 0.0;
        self.for_each_within(z, rho, |idx, _| s += self.points[idx].1);
        Ok(s)
    }

    fn total(&self) -> f64 {
        self.total
    }
}

/// Either representation.
#[derive(Debug, Clone, PartialEq)]
pub enum TorusMeasure {
    Grid(GridMeasure),
    Cloud(PointCloudMeasure),
}

impl BallMass for TorusMeasure {
    fn ball_mass(&self, z: TorusPoint, rho: f64) -> Result<f64> {
        match self {
            TorusMeasure::Grid(g) => g.ball_mass(z, rho),
            TorusMeasure::Cloud(c) => c.ball_mass(z, rho),
        }
    }

    fn total(&self) -> f64 {
        match self {
            TorusMeasure::Grid(g) => g.total(),
            TorusMeasure::Cloud(c) => c.total(),
        }
    }
}

pub fn grid_index(n: usize, p: TorusPoint) -> usize {
    let i = ((p.x * n as f64) as usize).min(n - 1);
    let j = ((p.y * n as f64) as usize).min(n - 1);
    i * n + j
}

/// One term `amp cos(2 pi k.x + phase)` of a reference density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityMode {
    pub k: [i32; 2],
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

/// The smooth reference measure `m`: Lebesgue or `1 + sum amp cos(2 pi k.x + phase)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SmoothReference {
    #[default]
    Lebesgue,
    Trig(Vec<DensityMode>),
}

impl SmoothReference {
    pub fn trig(modes: Vec<DensityMode>) -> Result<Self> {
        let s: f64 = modes.iter().map(|m| m.amp.abs()).sum();
        if !(s < 1.0) {
            return Err(LabError::InvalidArgument(format!("sum of |amp| = {s} must be below 1")));
        }
        if modes.iter().any(|m| m.k == [0, 0]) {
            return Err(LabError::InvalidArgument(
                "constant modes would break normalization".into(),
            ));
        }
        Ok(SmoothReference::Trig(modes))
    }

    pub fn density(&self, p: TorusPoint) -> f64 {
        match self {
            SmoothReference::Lebesgue => 1.0,
            SmoothReference::Trig(modes) => {
                1.0 + modes
                    .iter()
                    .map(|m| {
                        m.amp * (TAU * (m.k[0] as f64 * p.x + m.k[1] as f64 * p.y) + m.phase).cos()
                    })
                    .sum::<f64>()
            }
        }
    }

    /// `C0` with `C0^-1 <= dm/dLeb <= C0`.
    pub fn c0(&self) -> f64 {
        match self {
            SmoothReference::Lebesgue => 1.0,
            SmoothReference::Trig(modes) => {
                let s: f64 = modes.iter().map(|m| m.amp.abs()).sum();
                (1.0 + s).max(1.0 / (1.0 - s))
            }
        }
    }
}

/// Lattice quadrature of `int F(z) dm(z)` over `q x q` cell centers, deterministic order.
fn lattice_integral(
    q: usize,
    m: &SmoothReference,
    f: impl Fn(TorusPoint) -> Result<f64> + Sync,
) -> Result<f64> {
    let rows: Vec<f64> = (0..q)
        .into_par_iter()
        .map(|a| {
            let mut s = 0.0;
            for b in 0..q {
                let z = cell_center(q, a, b);
                let v = f(z)?;
                if v != 0.0 {
                    s += v * m.density(z);
                }
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.iter().sum::<f64>() / (q * q) as f64)
}

/// `<nu, nu'>_rho = rho^-4 int nu(B(z, rho)) nu'(B(z, rho)) dm(z)` by lattice quadrature.
pub fn rho_inner<A, B>(nu: &A, nu2: &B, rho: f64, m: &SmoothReference, quad_n: usize) -> Result<f64>
where
    A: BallMass + Sync,
    B: BallMass + Sync,
{
    check_radius(rho)?;
    if quad_n == 0 {
        return Err(LabError::InvalidArgument("quadrature_n must be positive".into()));
    }
    if nu.total() == 0.0 || nu2.total() == 0.0 {
        return Ok(0.0);
    }
    let r4 = rho.powi(4);
    lattice_integral(quad_n, m, |z| {
        let a = nu.ball_mass(z, rho)?;
        if a == 0.0 {
            return Ok(0.0);
        }
        Ok(a * nu2.ball_mass(z, rho)? / r4)
    })
}

pub fn rho_norm<A: BallMass + Sync>(
    nu: &A,
    rho: f64,
    m: &SmoothReference,
    quad_n: usize,
) -> Result<f64> {
    Ok(rho_inner(nu, nu, rho, m, quad_n)?.max(0.0).sqrt())
}

/// Area of the intersection of two discs of radius `rho` at distance `d`.
pub fn lens_area(d: f64, rho: f64) -> f64 {
    if d >= 2.0 * rho {
        return 0.0;
    }
    let h = d / (2.0 * rho);
    2.0 * rho * rho * h.acos() - 0.5 * d * (4.0 * rho * rho - d * d).max(0.0).sqrt()
}

/// Exact `<nu, nu'>_rho` for `m` = Lebesgue and atomic measures:
/// `rho^-4 sum_i sum_j w_i w'_j |B(x_i, rho) cap B(y_j, rho)|`.
pub fn rho_inner_lebesgue_exact(
    nu: &PointCloudMeasure,
    nu2: &PointCloudMeasure,
    rho: f64,
) -> Result<f64> {
    check_radius(rho)?;
    let r4 = rho.powi(4);
    let parts: Vec<f64> = nu
        .points()
        .par_iter()
        .map(|(p, w)| {
            let mut s = 0.0;
            nu2.for_each_within(*p, 2.0 * rho, |idx, d| {
                s += nu2.points()[idx].1 * lens_area(d, rho)
            });
            w * s
        })
        .collect();
    Ok(parts.iter().sum::<f64>() / r4)
}

pub fn rho_norm_lebesgue_exact(nu: &PointCloudMeasure, rho: f64) -> Result<f64> {
    Ok(rho_inner_lebesgue_exact(nu, nu, rho)?.max(0.0).sqrt())
}

/// `rho -> |nu|_rho` on the given scales.
pub fn rho_norm_curve<A: BallMass + Sync>(
    nu: &A,
    scales: &[f64],
    m: &SmoothReference,
    quad_n: usize,
) -> Result<Vec<(f64, f64)>> {
    scales.iter().map(|&r| Ok((r, rho_norm(nu, r, m, quad_n)?))).collect()
}

/// Largest `|nu|_delta / |nu|_rho` over pairs `rho <= delta <= max_factor * rho` of a curve.
pub fn scale_change_ratio(curve: &[(f64, f64)], max_factor: f64) -> f64 {
    let mut best = 0.0f64;
    for &(rho, nr) in curve {
        for &(delta, nd) in curve {
            if delta >= rho && delta <= max_factor * rho * (1.0 + 1e-12) && nr > 0.0 {
                best = best.max(nd / nr);
            }
        }
    }
    best
}

/// Largest `|nu|_{rho/2} / |nu|_rho` between consecutive dyadic scales (descending input).
pub fn max_halving_ratio(curve: &[(f64, f64)]) -> f64 {
    curve.windows(2).map(|w| w[1].1 / w[0].1).fold(0.0, f64::max)
}

/// `int nu(B(z, delta(z)))^2 / delta(z)^4 dm(z)` by lattice quadrature.
pub fn variable_rho_norm<A, F>(nu: &A, delta: F, m: &SmoothReference, quad_n: usize) -> Result<f64>
where
    A: BallMass + Sync,
    F: Fn(TorusPoint) -> f64 + Sync,
{
    if quad_n == 0 {
        return Err(LabError::InvalidArgument("quadrature_n must be positive".into()));
    }
    lattice_integral(quad_n, m, |z| {
        let d = delta(z);
        check_radius(d)?;
        let a = nu.ball_mass(z, d)?;
        Ok(a * a / d.powi(4))
    })
}

/// `mu^{*j} * nu`: every atom is pushed by `words_per_point` independent length-`j` words.
pub fn convolve_power(
    law: &GeneratorLaw,
    j: usize,
    nu: &PointCloudMeasure,
    words_per_point: usize,
    seed: u64,
) -> Result<PointCloudMeasure> {
    if j == 0 {
        return Ok(nu.clone());
    }
    if words_per_point == 0 {
        return Err(LabError::InvalidArgument("words_per_point must be positive".into()));
    }
    let pts: Vec<(TorusPoint, f64)> = nu
        .points()
        .par_iter()
        .enumerate()
        .flat_map_iter(|(a, &(p, w))| {
            (0..words_per_point).map(move |k| {
                let mut rng = task_rng(seed, (a * words_per_point + k) as u64);
                let mut q = p;
                for _ in 0..j {
                    q = law.maps()[law.sample_index(&mut rng)].apply(q);
                }
                (q, w / words_per_point as f64)
            })
        })
        .collect();
    PointCloudMeasure::new(pts)
}

/// Histogram of `f^j_w(x0)` for `burn_in < j <= n` over `words` independent words.
pub fn estimate_stationary(
    law: &GeneratorLaw,
    x0: TorusPoint,
    n: usize,
    words: usize,
    burn_in: usize,
    seed: u64,
    grid_n: usize,
) -> Result<GridMeasure> {
    if n <= burn_in {
        return Err(LabError::InvalidArgument(format!("n = {n} must exceed burn_in = {burn_in}")));
    }
    if words == 0 || grid_n == 0 {
        return Err(LabError::InvalidArgument("words and grid_n must be positive".into()));
    }
    let counts = chunked_histogram(words, grid_n, |w, hist| {
        let mut rng = task_rng(seed, w as u64);
        let mut q = x0;
        for j in 1..=n {
            q = law.maps()[law.sample_index(&mut rng)].apply(q);
            if j > burn_in {
                hist[grid_index(grid_n, q)] += 1;
            }
        }
    });
    GridMeasure::from_counts(grid_n, &counts)
}

/// Like [`estimate_stationary`], but every word starts at its own Lebesgue-random point.
/// For a single map this is the physical-measure pipeline.
pub fn estimate_from_lebesgue(
    law: &GeneratorLaw,
    n: usize,
    words: usize,
    burn_in: usize,
    seed: u64,
    grid_n: usize,
) -> Result<GridMeasure> {
    if n <= burn_in {
        return Err(LabError::InvalidArgument(format!("n = {n} must exceed burn_in = {burn_in}")));
    }
    if words == 0 || grid_n == 0 {
        return Err(LabError::InvalidArgument("words and grid_n must be positive".into()));
    }
    let counts = chunked_histogram(words, grid_n, |w, hist| {
        let mut rng = task_rng(seed, w as u64);
        let mut q = TorusPoint::new(rng.gen(), rng.gen());
        for j in 1..=n {
            q = law.maps()[law.sample_index(&mut rng)].apply(q);
            if j > burn_in {
                hist[grid_index(grid_n, q)] += 1;
            }
        }
    });
    GridMeasure::from_counts(grid_n, &counts)
}

/// Cesàro average `(1/n) sum_{j<n} mu^{*j} * m_curve` of normalized arc length on `curve`,
/// from `samples` start points uniform in arc length, each followed along one word.
pub fn srb_from_curve(
    law: &GeneratorLaw,
    curve: &CurveJet,
    n: usize,
    samples: usize,
    seed: u64,
    grid_n: usize,
) -> Result<GridMeasure> {
    if n == 0 || samples == 0 || grid_n == 0 {
        return Err(LabError::InvalidArgument("n, samples and grid_n must be positive".into()));
    }
    let arcs = curve.arc_lengths();
    let total = arcs[arcs.len() - 1];
    let counts = chunked_histogram(samples, grid_n, |k, hist| {
        let mut rng = task_rng(seed, k as u64);
        let s = total * rng.gen::<f64>();
        let i = arcs.partition_point(|&a| a <= s).clamp(1, arcs.len() - 1) - 1;
        let frac = (s - arcs[i]) / (arcs[i + 1] - arcs[i]);
        let t = curve.t(i) + frac * (curve.t(i + 1) - curve.t(i));
        let mut q = TorusPoint::from_vec(curve.eval(t).0);
        hist[grid_index(grid_n, q)] += 1;
        for _ in 1..n {
            q = law.maps()[law.sample_index(&mut rng)].apply(q);
            hist[grid_index(grid_n, q)] += 1;
        }
    });
    GridMeasure::from_counts(grid_n, &counts)
}

/// Runs `task(k, hist)` for `k < tasks` in fixed chunks and sums the integer histograms.
pub(crate) fn chunked_histogram(
    tasks: usize,
    grid_n: usize,
    task: impl Fn(usize, &mut [u64]) + Sync,
) -> Vec<u64> {
    let chunks = HISTOGRAM_CHUNKS.min(tasks).max(1);
    let per = tasks.div_ceil(chunks);
    // integer sums, so the reduction order does not affect the result
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut hist = vec![0u64; grid_n * grid_n];
            for k in (c * per)..((c + 1) * per).min(tasks) {
                task(k, &mut hist);
            }
            hist
        })
        .reduce(
            || vec![0u64; grid_n * grid_n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Normalized coarse-graining of a measure to `res x res` cells.
pub fn coarse_grain(nu: &TorusMeasure, res: usize) -> Result<Vec<f64>> {
    if res == 0 {
        return Err(LabError::InvalidArgument("resolution must be positive".into()));
    }
    let mut out = vec![0.0; res * res];
    match nu {
        TorusMeasure::Grid(g) => {
            let n = g.n();
            for i in 0..n {
                for j in 0..n {
                    out[grid_index(res, cell_center(n, i, j))] += g.cell(i, j);
                }
            }
        }
        TorusMeasure::Cloud(c) => {
            for (p, w) in c.points() {
                out[grid_index(res, *p)] += w;
            }
        }
    }
    let t: f64 = out.iter().sum();
    if t <= 0.0 {
        return Err(LabError::InvalidArgument("cannot coarse-grain the zero measure".into()));
    }
    out.iter_mut().for_each(|v| *v /= t);
    Ok(out)
}

/// Total-variation distance `1/2 sum |p - q|` between coarse-grainings.
pub fn coarse_distance(a: &TorusMeasure, b: &TorusMeasure, res: usize) -> Result<f64> {
    let p = coarse_grain(a, res)?;
    let q = coarse_grain(b, res)?;
    Ok(tv_distance(&p, &q))
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
