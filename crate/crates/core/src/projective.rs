//! Dynamics on the projective tangent bundle: fiber measures of pushed line
//! fields, Hölder profiles of those fibers, the Hölder fit of the unstable line
//! field, and the transversality sets of pairs of words.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::cone::{CertReport, ConeSystem};
use crate::error::{LabError, Result};
use crate::random_system::{task_rng, unstable_direction, DirectionBound, GeneratorLaw};
use crate::torus::{line_angle, unit_from_angle, TorusPoint};

pub const FIBER_CSV_HEADER: &str = "angle,weight";
pub const PROFILE_CSV_HEADER: &str = "r,mass,slope";
/// Slopes below this value mark a profile as degenerate (an atom carries the mass).
pub const DEGENERATE_SLOPE: f64 = 0.05;

/// Distance between two lines given by angles, with wraparound at `pi`.
pub fn proj_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// A measure on the lines through `base`, as weighted angles in `[0, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberMeasure {
    pub base: TorusPoint,
    pub atoms: Vec<(f64, f64)>,
    /// Number of independent samples behind the atoms; sets the resolution floor.
    pub samples: usize,
}

impl FiberMeasure {
    pub fn new(base: TorusPoint, atoms: Vec<(f64, f64)>, samples: usize) -> Result<Self> {
        if atoms.is_empty() {
            return Err(LabError::InvalidArgument("fiber measure needs at least one atom".into()));
        }
        if atoms.iter().any(|&(a, w)| !a.is_finite() || !(w >= 0.0)) {
            return Err(LabError::InvalidArgument(
                "fiber atoms need finite angles and nonnegative weights".into(),
            ));
        }
        let atoms = atoms.into_iter().map(|(a, w)| (a.rem_euclid(PI), w)).collect();
        Ok(Self { base, atoms, samples: samples.max(1) })
    }

    pub fn dirac(base: TorusPoint, angle: f64) -> Self {
        Self { base, atoms: vec![(angle.rem_euclid(PI), 1.0)], samples: 1 }
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(FIBER_CSV_HEADER);
        s.push('\n');
        for (a, w) in &self.atoms {
            let _ = writeln!(s, "{a},{w}");
        }
        s
    }
}

/// The fiber over `x` of the `n`-fold convolution of the law with the line field
/// that carries `seed` (weighted angles) over every point.
///
/// Each of `words` sampled words pulls `x` back and pushes the seed lines forward by
/// the word's derivative; atoms carry weight `w / words`.
pub fn push_fiber(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    seed_atoms: &[(f64, f64)],
    n: usize,
    words: usize,
    x: TorusPoint,
    seed: u64,
) -> Result<FiberMeasure> {
    if seed_atoms.iter().any(|&(a, _)| !cones.unstable.contains_angle(a)) {
        return Err(LabError::InvalidArgument("seed lines must lie in the unstable cone".into()));
    }
    if n == 0 {
        return FiberMeasure::new(x, seed_atoms.to_vec(), 1);
    }
    if words == 0 {
        return Err(LabError::InvalidArgument("words must be positive".into()));
    }
    let per_word: Vec<Vec<(f64, f64)>> = (0..words)
        .into_par_iter()
        .map(|k| {
            let mut rng = task_rng(seed, k as u64);
            let word = law.sample_indices(n, &mut rng);
            let mut y = x;
            for &i in word.iter().rev() {
                y = law.maps()[i].inverse(y)?;
            }
            let m = law.compose_differential(&word, y).m;
            Ok(seed_atoms
                .iter()
                .map(|&(a, w)| (line_angle(m * unit_from_angle(a)), w / words as f64))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    FiberMeasure::new(x, per_word.into_iter().flatten().collect(), words)
}

/// Maximal window masses of a fiber at a list of radii, with a log-log slope fit.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderProfile {
    /// `(r, max mass of a closed window of radius r centred at an atom)`.
    pub rows: Vec<(f64, f64)>,
    /// Fitted exponent `alpha` of `mass(r) <= C5 r^alpha`.
    pub alpha: f64,
    /// Fitted `C5`: the smallest constant with `mass(r) <= C5 r^alpha` on the fitted rows.
    pub c5: f64,
    /// Masses below this level are sampling noise (`1/sqrt(samples)`).
    pub floor_mass: f64,
    /// Smallest radius whose mass clears the floor.
    pub floor_radius: Option<f64>,
    /// Number of rows used by the fit.
    pub fitted_rows: usize,
    /// True when the fiber is (close to) atomic.
    pub degenerate: bool,
}

impl HolderProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(PROFILE_CSV_HEADER);
        s.push('\n');
        for (r, m) in &self.rows {
            let _ = writeln!(s, "{r},{m},{}", self.alpha);
        }
        s
    }
}

/// Geometric radii `2^{-k/2}` for `k = 2..=2 * levels + 1`.
pub fn default_radii(levels: usize) -> Vec<f64> {
    (2..=2 * levels + 1).map(|k| 0.5f64.powf(k as f64 / 2.0)).collect()
}

/// Least-squares line `y = a + b x`; returns `(a, b, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return (my, 0.0, 0.0);
    }
    let b = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (my - b * mx, b, r2)
}

/// Window masses of `fiber` at `radii` and a log-log fit over the resolved, unsaturated rows.
pub fn holder_profile(fiber: &FiberMeasure, radii: &[f64]) -> Result<HolderProfile> {
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(LabError::InvalidArgument("radii must be positive".into()));
    }
    let total = fiber.mass();
    if !(total > 0.0) {
        return Err(LabError::InvalidArgument("fiber has no mass".into()));
    }
    let mut atoms: Vec<(f64, f64)> = fiber.atoms.iter().map(|&(a, w)| (a, w / total)).collect();
    atoms.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let n = atoms.len();
    // three copies shifted by -pi, 0, +pi so every window is a contiguous range
    let pos: Vec<f64> = (0..3 * n).map(|k| atoms[k % n].0 + (k / n) as f64 * PI - PI).collect();
    let mut prefix = vec![0.0; 3 * n + 1];
    for k in 0..3 * n {
        prefix[k + 1] = prefix[k] + atoms[k % n].1;
    }
    let rows: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| {
            if 2.0 * r >= PI {
                return (r, 1.0);
            }
            let best = (0..n)
                .map(|i| {
                    let c = atoms[i].0;
                    let lo = pos.partition_point(|&p| p < c - r);
                    let hi = pos.partition_point(|&p| p <= c + r);
                    prefix[hi] - prefix[lo]
                })
                .fold(0.0, f64::max);
            (r, best.min(1.0))
        })
        .collect();
    let floor_mass = 1.0 / (fiber.samples as f64).sqrt();
    let floor_radius = rows
        .iter()
        .filter(|&&(_, m)| m >= floor_mass)
        .map(|&(r, _)| r)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))));
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|&&(_, m)| m >= floor_mass && m < 1.0 - 1e-12)
        .map(|&(r, m)| (r.ln(), m.ln()))
        .collect();
    let (alpha, c5) = if fit.len() >= 2 {
        let xs: Vec<f64> = fit.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = fit.iter().map(|p| p.1).collect();
        let alpha = linear_fit(&xs, &ys).1.max(0.0);
        let c5 = fit.iter().map(|&(lr, lm)| (lm - alpha * lr).exp()).fold(0.0, f64::max);
        (alpha, c5)
    } else {
        (0.0, 1.0)
    };
    Ok(HolderProfile {
        rows,
        alpha,
        c5,
        floor_mass,
        floor_radius,
        fitted_rows: fit.len(),
        degenerate: alpha < DEGENERATE_SLOPE,
    })
}

/// Validity floor `eta` implied by a profile of the `n`-step fiber: `floor_radius^(1/n)`.
pub fn eta_from_profile(profile: &HolderProfile, n: usize) -> Option<f64> {
    profile.floor_radius.map(|r| r.powf(1.0 / n.max(1) as f64).min(1.0 - 1e-12))
}

/// Hölder constants `(L0, theta)` of the unstable line field, `angle <= L0 d^theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderFit {
    pub l0: f64,
    pub theta: f64,
    /// Pairs whose angle difference was above round-off.
    pub resolved_pairs: usize,
}

/// Fits `(L0, theta)` from `pairs` point pairs at log-uniform distances in `[1e-5, 1e-1]`,
/// each pair sharing a random past word of length `n_trunc`.
///
/// Constant line fields (linear laws) give `L0 = 0` and `theta = 1`.
pub fn fit_unstable_holder(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    cert: &CertReport,
    pairs: usize,
    n_trunc: usize,
    seed: u64,
) -> Result<HolderFit> {
    let bound = DirectionBound::from_report(cert);
    let samples: Vec<(f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = task_rng(seed, k as u64);
            let past = law.sample_indices(n_trunc, &mut rng);
            let x = TorusPoint::new(rng.gen(), rng.gen());
            let d = 10f64.powf(-rng.gen_range(1.0..5.0));
            let dir = unit_from_angle(rng.gen_range(0.0..PI));
            let y = TorusPoint::from_vec(x.to_vec() + dir * d);
            let ex = unstable_direction(law, cones, &bound, &past, x, n_trunc)?.line;
            let ey = unstable_direction(law, cones, &bound, &past, y, n_trunc)?.line;
            Ok((d, proj_dist(line_angle(ex), line_angle(ey))))
        })
        .collect::<Result<Vec<_>>>()?;
    let resolved: Vec<(f64, f64)> = samples.iter().copied().filter(|&(_, a)| a > 1e-13).collect();
    if resolved.len() < 2 {
        return Ok(HolderFit { l0: 0.0, theta: 1.0, resolved_pairs: resolved.len() });
    }
    let xs: Vec<f64> = resolved.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = resolved.iter().map(|p| p.1.ln()).collect();
    let theta = linear_fit(&xs, &ys).1.clamp(1e-3, 1.0);
    let l0 = resolved.iter().map(|&(d, a)| a / d.powf(theta)).fold(0.0, f64::max);
    Ok(HolderFit { l0, theta, resolved_pairs: resolved.len() })
}

/// Constants of the transversality threshold `5 C10 lambda^n e^{delta n}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransversalityConstants {
    pub c10: f64,
    pub lambda: f64,
}

impl TransversalityConstants {
    /// `C10 = max{2 C4, L0}` and `lambda = max{lambda_s^theta, lambda_{s,+} / lambda_{u,-}}`.
    pub fn new(cert: &CertReport, holder: &HolderFit) -> Self {
        Self {
            c10: (2.0 * cert.c4).max(holder.l0),
            lambda: cert.lambda_s().powf(holder.theta).max(cert.cone_ratio()),
        }
    }

    pub fn threshold(&self, n: usize, delta: f64) -> f64 {
        5.0 * self.c10 * self.lambda.powi(n as i32) * (delta * n as f64).exp()
    }
}

/// Angles of the boundary rays of `Df^n_w C^u` at the preimage of `p`, plus the image
/// of the cone bisector.
fn image_cone_lines(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    p: TorusPoint,
    word: &[usize],
) -> Result<[f64; 3]> {
    let mut y = p;
    for &i in word.iter().rev() {
        y = law.maps()[i].inverse(y)?;
    }
    let m = law.compose_differential(word, y).m;
    let [b0, b1] = cones.unstable.boundary();
    Ok([line_angle(m * b0), line_angle(m * b1), line_angle(m * cones.unstable.bisector())])
}

/// Largest angle between a line of one pushed cone and a line of the other.
pub fn cone_image_gap(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    p: TorusPoint,
    w1: &[usize],
    w2: &[usize],
) -> Result<f64> {
    let a = image_cone_lines(law, cones, p, w1)?;
    let b = image_cone_lines(law, cones, p, w2)?;
    Ok(a.iter().flat_map(|&x| b.iter().map(move |&y| proj_dist(x, y))).fold(0.0, f64::max))
}

/// True when the pair of words is non-transverse at `p`: every line of one pushed cone
/// is within `5 C10 lambda^n e^{delta n}` of every line of the other.
#[allow(clippy::too_many_arguments)]
pub fn transversality_test(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    consts: &TransversalityConstants,
    p: TorusPoint,
    n: usize,
    delta: f64,
    w1: &[usize],
    w2: &[usize],
) -> Result<bool> {
    if w1.len() != n || w2.len() != n {
        return Err(LabError::InvalidArgument(format!("words must have length n = {n}")));
    }
    let th = consts.threshold(n, delta);
    if th >= PI / 2.0 {
        return Ok(true);
    }
    Ok(cone_image_gap(law, cones, p, w1, w2)? <= th)
}

/// Monte-Carlo estimate of the probability that a random word is non-transverse to a
/// fixed reference word.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransversalityRecord {
    pub p: TorusPoint,
    pub n: usize,
    pub delta: f64,
    pub threshold: f64,
    pub pairs_tested: usize,
    pub nontransverse_fraction: f64,
}

pub const TRANSVERSALITY_CSV_HEADER: &str = "n,delta,threshold,pairs,nontransverse_fraction";

impl TransversalityRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.n, self.delta, self.threshold, self.pairs_tested, self.nontransverse_fraction
        )
    }
}

/// Fraction of `trials` random words `w'` with `(w, w')` non-transverse at `p`, where `w`
/// is a reference word drawn from the same seed.
#[allow(clippy::too_many_arguments)]
pub fn nontransverse_mass(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    consts: &TransversalityConstants,
    p: TorusPoint,
    n: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<TransversalityRecord> {
    if trials == 0 {
        return Err(LabError::InvalidArgument("trials must be positive".into()));
    }
    let threshold = consts.threshold(n, delta);
    let reference = law.sample_indices(n, &mut task_rng(seed, u64::MAX));
    let hits: usize = if threshold >= PI / 2.0 {
        trials
    } else {
        let a = image_cone_lines(law, cones, p, &reference)?;
        let flags = (0..trials)
            .into_par_iter()
            .map(|k| {
                let w = law.sample_indices(n, &mut task_rng(seed, k as u64));
                let b = image_cone_lines(law, cones, p, &w)?;
                let gap = a
                    .iter()
                    .flat_map(|&x| b.iter().map(move |&y| proj_dist(x, y)))
                    .fold(0.0, f64::max);
                Ok(usize::from(gap <= threshold))
            })
            .collect::<Result<Vec<_>>>()?;
        flags.iter().sum()
    };
    Ok(TransversalityRecord {
        p,
        n,
        delta,
        threshold,
        pairs_tested: trials,
        nontransverse_fraction: hits as f64 / trials as f64,
    })
}

/// Average of [`nontransverse_mass`] over `references` independent reference words.
#[allow(clippy::too_many_arguments)]
pub fn nontransverse_mass_averaged(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    consts: &TransversalityConstants,
    p: TorusPoint,
    n: usize,
    delta: f64,
    references: usize,
    trials: usize,
    seed: u64,
) -> Result<TransversalityRecord> {
    if references == 0 {
        return Err(LabError::InvalidArgument("references must be positive".into()));
    }
    let mut sum = 0.0;
    let mut rec = None;
    for r in 0..references {
        let one = nontransverse_mass(
            law,
            cones,
            consts,
            p,
            n,
            delta,
            trials,
            crate::random_system::derive_seed(seed, r as u64),
        )?;
        sum += one.nontransverse_fraction;
        rec = Some(one);
    }
    let mut rec = rec.expect("at least one reference");
    rec.pairs_tested = references * trials;
    rec.nontransverse_fraction = sum / references as f64;
    Ok(rec)
}

/// Geometric decay fit `mass ~ c r^n`: `(r, r2)`, or `None` when a mass vanishes.
pub fn geometric_decay_fit(records: &[TransversalityRecord]) -> Option<(f64, f64)> {
    if records.len() < 2 || records.iter().any(|r| !(r.nontransverse_fraction > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = records.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.nontransverse_fraction.ln()).collect();
    let (_, b, r2) = linear_fit(&xs, &ys);
    Some((b.exp(), r2))
}

/// Unit vector of the cone bisector, a convenient seed line.
pub fn bisector_seed(cones: &ConeSystem) -> Vec<(f64, f64)> {
    vec![(line_angle(cones.unstable.bisector()), 1.0)]
}

/// Largest `epsilon` admitted by the budget
/// `min{1, (1 + lambda_{u,-})/2, -alpha ln(eta)/8, -alpha theta ln(lambda_s)/10,
/// -alpha ln(lambda_{s,+}/lambda_{u,-})/10}`.
pub fn epsilon_budget(cert: &CertReport, alpha: f64, eta: f64, theta: f64) -> f64 {
    [
        1.0,
        (1.0 + cert.lambda_u_minus) / 2.0,
        -alpha * eta.ln() / 8.0,
        -alpha * theta * cert.lambda_s().ln() / 10.0,
        -alpha * cert.cone_ratio().ln() / 10.0,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}
