//! Words over a finite generator law, random compositions, cocycle derivatives,
//! truncated stable/unstable lines and the uniform-expansion margin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cone::{CertReport, ConeSystem};
use crate::error::{LabError, Result};
use crate::torus::{op_norm, unit_from_angle, Mat2, TorusMap, TorusPoint, Vec2};

/// Renormalization threshold for accumulated derivative products.
pub const RENORMALIZE_ABOVE: f64 = 1e100;
/// Largest word count that `uniform_expansion_margin` enumerates.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the independent stream for task `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Generator for task `index`; results never depend on which thread runs the task.
pub fn task_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// A finitely supported law `mu` on maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorLaw {
    maps: Vec<TorusMap>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl GeneratorLaw {
    pub fn new(maps: Vec<TorusMap>, weights: Vec<f64>) -> Result<Self> {
        if maps.is_empty() {
            return Err(LabError::InvalidArgument("law needs at least one map".into()));
        }
        if maps.len() != weights.len() {
            return Err(LabError::InvalidArgument(format!(
                "{} maps but {} weights",
                maps.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LabError::InvalidArgument(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(LabError::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cumulative.push(acc);
        }
        Ok(Self { maps, weights, cumulative })
    }

    pub fn uniform(maps: Vec<TorusMap>) -> Result<Self> {
        let n = maps.len().max(1);
        Self::new(maps, vec![1.0 / n as f64; n])
    }

    pub fn maps(&self) -> &[TorusMap] {
        &self.maps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn is_linear(&self) -> bool {
        self.maps.iter().all(TorusMap::is_linear)
    }

    /// Draw one generator index.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        // zero-weight generators are never drawn
        let k = self.cumulative.partition_point(|&c| c <= u);
        let mut k = k.min(self.len() - 1);
        while self.weights[k] == 0.0 && k > 0 {
            k -= 1;
        }
        k
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.sample_index(rng)).collect()
    }

    /// `f^n_w(p)`, applying `word[0]` first.
    pub fn compose_apply(&self, word: &[usize], p: TorusPoint) -> TorusPoint {
        word.iter().fold(p, |q, &i| self.maps[i].apply(q))
    }

    /// Points `p, f_0 p, ..., f^n_w p` (length `n + 1`).
    pub fn orbit(&self, word: &[usize], p: TorusPoint) -> Vec<TorusPoint> {
        let mut out = Vec::with_capacity(word.len() + 1);
        out.push(p);
        let mut q = p;
        for &i in word {
            q = self.maps[i].apply(q);
            out.push(q);
        }
        out
    }

    /// `Df^n_w(p)` as a scaled product.
    pub fn compose_differential(&self, word: &[usize], p: TorusPoint) -> ScaledMatrix {
        let mut acc = ScaledMatrix::identity();
        let mut q = p;
        for &i in word {
            acc.left_mul(&self.maps[i].differential(q));
            q = self.maps[i].apply(q);
        }
        acc
    }

    /// Weighted log-probability of a word.
    pub fn log_probability(&self, word: &[usize]) -> f64 {
        word.iter().map(|&i| self.weights[i].ln()).sum()
    }
}

/// A word together with the seed it was drawn with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub indices: Vec<usize>,
    pub seed: u64,
}

/// IID word of length `n`, deterministic in `seed`.
pub fn sample_word(law: &GeneratorLaw, n: usize, seed: u64) -> Word {
    let mut rng = task_rng(seed, 0);
    Word { indices: law.sample_indices(n, &mut rng), seed }
}

/// `exp(log_scale) * m`; keeps long products of hyperbolic matrices finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledMatrix {
    pub m: Mat2,
    pub log_scale: f64,
}

impl ScaledMatrix {
    pub fn identity() -> Self {
        Self { m: Mat2::identity(), log_scale: 0.0 }
    }

    /// Replace `self` by `a * self`.
    pub fn left_mul(&mut self, a: &Mat2) {
        self.m = a * self.m;
        let n = op_norm(&self.m);
        if n > RENORMALIZE_ABOVE {
            self.m /= n;
            self.log_scale += n.ln();
        }
    }

    /// Dense matrix; may overflow for very long products.
    pub fn to_matrix(&self) -> Mat2 {
        self.m * self.log_scale.exp()
    }

    pub fn log_norm(&self) -> f64 {
        op_norm(&self.m).ln() + self.log_scale
    }

    /// `log |M v| - log |v|`.
    pub fn log_stretch(&self, v: Vec2) -> f64 {
        (self.m * v).norm().ln() - v.norm().ln() + self.log_scale
    }
}

/// Constants that bound how fast pushed lines in the cone converge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionBound {
    pub c4: f64,
    pub ratio: f64,
}

impl DirectionBound {
    pub fn from_report(r: &CertReport) -> Self {
        Self { c4: r.c4, ratio: r.cone_ratio() }
    }

    pub fn error(&self, n: usize) -> f64 {
        self.c4 * self.ratio.powi(n as i32)
    }
}

/// A unit line with its certified distance to the true invariant line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionEstimate {
    pub line: Vec2,
    pub error_bound: f64,
}

impl DirectionEstimate {
    pub fn slope(&self) -> f64 {
        self.line.y / self.line.x
    }
}

/// Unstable line at `x` for the past `past` (the last `n_trunc` letters lead into `x`).
pub fn unstable_direction(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    bound: &DirectionBound,
    past: &[usize],
    x: TorusPoint,
    n_trunc: usize,
) -> Result<DirectionEstimate> {
    if past.len() < n_trunc {
        return Err(LabError::InvalidArgument(format!(
            "past word has length {} < n_trunc = {n_trunc}",
            past.len()
        )));
    }
    let used = &past[past.len() - n_trunc..];
    let mut pts = Vec::with_capacity(n_trunc);
    let mut p = x;
    for &i in used.iter().rev() {
        p = law.maps[i].inverse(p)?;
        pts.push(p);
    }
    let mut v = cones.unstable.bisector();
    for (k, &i) in used.iter().enumerate() {
        let q = pts[n_trunc - 1 - k];
        v = law.maps[i].differential(q) * v;
        v /= v.norm();
    }
    Ok(DirectionEstimate { line: v, error_bound: bound.error(n_trunc) })
}

/// Stable line at `x` for the future `future` (its first `n_trunc` letters).
pub fn stable_direction(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    bound: &DirectionBound,
    future: &[usize],
    x: TorusPoint,
    n_trunc: usize,
) -> Result<DirectionEstimate> {
    if future.len() < n_trunc {
        return Err(LabError::InvalidArgument(format!(
            "future word has length {} < n_trunc = {n_trunc}",
            future.len()
        )));
    }
    let used = &future[..n_trunc];
    let orbit = law.orbit(used, x);
    let mut v = cones.stable.bisector();
    for k in (0..n_trunc).rev() {
        v = law.maps[used[k]].inverse_differential(orbit[k]) * v;
        v /= v.norm();
    }
    Ok(DirectionEstimate { line: v, error_bound: bound.error(n_trunc) })
}

/// `(1/n) log(|Df^n|_F| |Df^n|_E|)` along `word[..n]` from `x`.
///
/// `F` is the unstable estimate from the last `n_trunc` letters of `past`. `E` is the
/// stable estimate from the first `n + n_trunc` letters of `word` (or all of it when
/// shorter): the stable cone bisector is pulled back along the stored forward orbit,
/// and its stretch over the first `n` steps is read off the backward pass, so no
/// cancellation occurs.
pub fn determinant_product_check(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    past: &[usize],
    word: &[usize],
    x: TorusPoint,
    n: usize,
    n_trunc: usize,
) -> Result<f64> {
    if n == 0 || word.len() < n {
        return Err(LabError::InvalidArgument(format!("need 1 <= n <= word length, got n = {n}")));
    }
    let bound = DirectionBound { c4: 1.0, ratio: 1.0 };
    let f = unstable_direction(law, cones, &bound, past, x, n_trunc)?.line;
    let horizon = (n + n_trunc).min(word.len());
    let orbit = law.orbit(&word[..horizon], x);
    let mut log_f = 0.0;
    let mut v = f;
    for k in 0..n {
        v = law.maps[word[k]].differential(orbit[k]) * v;
        let s = v.norm();
        log_f += s.ln();
        v /= s;
    }
    let mut log_e_inv = 0.0;
    let mut e = cones.stable.bisector();
    for k in (0..horizon).rev() {
        e = law.maps[word[k]].inverse_differential(orbit[k]) * e;
        let s = e.norm();
        if k < n {
            log_e_inv += s.ln();
        }
        e /= s;
    }
    Ok((log_f - log_e_inv) / n as f64)
}

/// Eigenlines of a hyperbolic 2x2 matrix, expanding line first.
pub fn eigenlines(m: &Mat2) -> [Vec2; 2] {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let tr = a + d;
    let det = a * d - b * c;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (l1, l2) = if tr >= 0.0 {
        (tr / 2.0 + disc, tr / 2.0 - disc)
    } else {
        (tr / 2.0 - disc, tr / 2.0 + disc)
    };
    let vec_for = |l: f64| {
        let v = if b.abs() >= c.abs() { Vec2::new(b, l - a) } else { Vec2::new(l - d, c) };
        v / v.norm()
    };
    [vec_for(l1), vec_for(l2)]
}

/// Sample points `(i/g, j/g)` and directions `k pi / d`, plus the eigenlines of every
/// generator's linear part. Doubling either grid keeps the old sample.
pub fn expansion_sample(
    law: &GeneratorLaw,
    space_grid: usize,
    dir_grid: usize,
) -> (Vec<TorusPoint>, Vec<Vec2>) {
    let mut pts = Vec::with_capacity(space_grid * space_grid);
    for i in 0..space_grid {
        for j in 0..space_grid {
            pts.push(TorusPoint::new(i as f64 / space_grid as f64, j as f64 / space_grid as f64));
        }
    }
    let mut dirs: Vec<Vec2> = (0..dir_grid)
        .map(|k| unit_from_angle(std::f64::consts::PI * k as f64 / dir_grid as f64))
        .collect();
    for m in law.maps() {
        dirs.extend(eigenlines(&m.linear_part()));
    }
    (pts, dirs)
}

fn expectation_at(law: &GeneratorLaw, n: usize, p: TorusPoint, dirs: &[Vec2]) -> Vec<f64> {
    let mut acc = vec![0.0; dirs.len()];
    fn walk(
        law: &GeneratorLaw,
        depth: usize,
        p: TorusPoint,
        m: ScaledMatrix,
        w: f64,
        dirs: &[Vec2],
        acc: &mut [f64],
    ) {
        if w == 0.0 {
            return;
        }
        if depth == 0 {
            for (a, v) in acc.iter_mut().zip(dirs) {
                *a += w * m.log_stretch(*v);
            }
            return;
        }
        for (i, map) in law.maps.iter().enumerate() {
            let mut mi = m;
            mi.left_mul(&map.differential(p));
            let q = if depth > 1 && !map.is_linear() { map.apply(p) } else { p };
            walk(law, depth - 1, q, mi, w * law.weights[i], dirs, acc);
        }
    }
    walk(law, n, p, ScaledMatrix::identity(), 1.0, dirs, &mut acc);
    acc
}

/// Minimum over the `(x, v)` sample of the exact `mu^N` average of `log |Df^N_w(x) v|`.
pub fn uniform_expansion_margin(
    law: &GeneratorLaw,
    n: usize,
    space_grid: usize,
    dir_grid: usize,
) -> Result<f64> {
    if n == 0 || space_grid == 0 || dir_grid == 0 {
        return Err(LabError::InvalidArgument(
            "N, space_grid and dir_grid must be positive".into(),
        ));
    }
    let count = (law.len() as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(LabError::EnumerationTooLarge { count, limit: ENUMERATION_LIMIT });
    }
    let (pts, dirs) = expansion_sample(law, space_grid, dir_grid);
    let linear = law.is_linear();
    let pts = if linear { vec![pts[0]] } else { pts };
    let mins: Vec<f64> = pts
        .par_iter()
        .map(|&p| expectation_at(law, n, p, &dirs).into_iter().fold(f64::INFINITY, f64::min))
        .collect();
    Ok(mins.into_iter().fold(f64::INFINITY, f64::min))
}

/// Smallest `N <= max_n` with a positive margin, with the margins seen on the way.
pub fn smallest_expanding_n(
    law: &GeneratorLaw,
    max_n: usize,
    space_grid: usize,
    dir_grid: usize,
) -> Result<(Option<usize>, Vec<f64>)> {
    let mut margins = Vec::new();
    for n in 1..=max_n {
        let m = uniform_expansion_margin(law, n, space_grid, dir_grid)?;
        margins.push(m);
        if m > 0.0 {
            return Ok((Some(n), margins));
        }
    }
    Ok((None, margins))
}
