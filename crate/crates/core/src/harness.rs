//! Empirical harnesses for the scale inequalities of pushed curve measures: the
//! key estimate for a single word, the Lasota–Yorke inequality for the averaged
//! operator, and the Cesàro bound.
//!
//! Norms are split by geometry. At a scale `rho` far below the curvature radius,
//! a curve with arc density `zeta` contributes `16/(3 rho) int zeta^2 ds` against
//! itself; for a pushed curve this is `16/(3 rho) int zeta0^2 / E ds0`, with `E` the
//! stretch of the tangent, so it is evaluated on the initial parametrization. Pairs of
//! distinct sheets contribute a term that does not depend on the scale for transverse
//! crossings (`pi^2 zeta1 zeta2 / sin(angle)` per ordered crossing); it is measured by
//! lens sums at a resolvable scale `rho_c`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::cone::{CertReport, ConeSystem};
use crate::curve::{compute_k0, CurveAtom, CurveJet, KZero, DEFAULT_SPACING};
use crate::error::{LabError, Result};
use crate::measure::{lens_area, rho_norm, GridMeasure, PointCloudMeasure, SmoothReference};
use crate::projective::{
    bisector_seed, default_radii, epsilon_budget, eta_from_profile, fit_unstable_holder,
    holder_profile, push_fiber, HolderFit, TransversalityConstants,
};
use crate::random_system::{derive_seed, task_rng, GeneratorLaw};
use crate::torus::{inv2, op_norm, TorusPoint, Vec2};

pub const HARNESS_CSV_HEADER: &str = "n,rho,lhs,rhs,pass";
/// Default resolvable scale for the sheet-crossing term.
pub const DEFAULT_RHO_C: f64 = 1.0 / 32.0;
/// Default number of coarse atoms per curve for crossing sums.
pub const DEFAULT_CROSS_ATOMS: usize = 256;
/// Default quadrature atoms per node interval for self terms.
pub const DEFAULT_PER_INTERVAL: usize = 4;

/// Self-term constant: `int (2 sqrt(rho^2 - d^2))^2 dd = 16 rho^3 / 3`.
const SELF_CONST: f64 = 16.0 / 3.0;

/// A finite weighted family of curve measures `sum_i w_i nu_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFamily {
    pub curves: Vec<CurveJet>,
    pub weights: Vec<f64>,
}

impl CurveFamily {
    pub fn new(curves: Vec<CurveJet>, weights: Vec<f64>) -> Result<Self> {
        if curves.is_empty() || curves.len() != weights.len() {
            return Err(LabError::InvalidArgument(
                "family needs matching nonempty curves and weights".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(LabError::InvalidArgument("family weights must be positive".into()));
        }
        Ok(Self { curves, weights })
    }

    /// `count` straight segments in random directions strictly inside the unstable cone,
    /// with lengths uniform in `lengths`, log-linear densities of slope at most `lip`,
    /// unit mass each and equal weights.
    pub fn random(
        cones: &ConeSystem,
        count: usize,
        lengths: (f64, f64),
        lip: f64,
        seed: u64,
    ) -> Result<Self> {
        if count == 0 || !(lengths.0 > 0.0 && lengths.1 >= lengths.0) {
            return Err(LabError::InvalidArgument(
                "need count > 0 and 0 < min length <= max length".into(),
            ));
        }
        let (lo, width) = (cones.unstable.from, cones.unstable.width());
        let curves = (0..count)
            .map(|k| {
                let mut rng = task_rng(seed, k as u64);
                let start = TorusPoint::new(rng.gen(), rng.gen());
                let ang = lo + width * rng.gen_range(0.05..0.95);
                let len = if lengths.1 > lengths.0 {
                    rng.gen_range(lengths.0..lengths.1)
                } else {
                    lengths.0
                };
                let slope = if lip > 0.0 { rng.gen_range(-lip..lip) } else { 0.0 };
                CurveJet::segment_with_density(
                    start,
                    Vec2::new(ang.cos(), ang.sin()),
                    len,
                    DEFAULT_SPACING,
                    move |s| slope * s,
                    lip,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(curves, vec![1.0 / count as f64; count])
    }

    /// Total mass `sum_i w_i nu_i(T^2)`.
    pub fn mass(&self) -> f64 {
        self.curves.iter().zip(&self.weights).map(|(c, w)| w * c.mass()).sum()
    }

    pub fn min_length(&self) -> f64 {
        self.curves.iter().map(|c| c.length()).fold(f64::INFINITY, f64::min)
    }

    /// Multiplies every weight by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { curves: self.curves.clone(), weights: self.weights.iter().map(|w| w * c).collect() }
    }
}

/// A point mass of a pushed family, labelled by curve, word and pushed arc position.
#[derive(Debug, Clone, Copy)]
struct LabeledAtom {
    pos: TorusPoint,
    weight: f64,
    curve: u32,
    group: u32,
    arc: f64,
}

/// Pushes a point and a unit tangent by `word`; returns the image and `ln |Df^n v|`.
fn push_tangent(law: &GeneratorLaw, word: &[usize], p: Vec2, v: Vec2) -> (TorusPoint, f64) {
    let mut q = TorusPoint::from_vec(p);
    let mut v = v;
    let mut log_e = 0.0;
    for &i in word {
        let map = &law.maps()[i];
        let w = map.differential(q) * v;
        let n = w.norm();
        log_e += n.ln();
        v = w / n;
        q = map.apply(q);
    }
    (q, log_e)
}

/// `sum_i w_i^2 int zeta_i^2 / E ds` for the family pushed by `word`.
fn self_integral(
    law: &GeneratorLaw,
    family: &CurveFamily,
    word: &[usize],
    per_interval: usize,
) -> f64 {
    family
        .curves
        .iter()
        .zip(&family.weights)
        .map(|(c, w)| {
            let atoms = c.atoms(per_interval);
            let parts: Vec<f64> = atoms
                .par_iter()
                .map(|a| {
                    let (_, log_e) = push_tangent(law, word, a.pos, a.tangent);
                    a.weight * a.density * (-log_e).exp()
                })
                .collect();
            w * w * parts.iter().sum::<f64>()
        })
        .sum()
}

/// Merges the fine atoms of `curve` into `count` contiguous blocks located at the block
/// middles.
fn coarse_atoms(curve: &CurveJet, count: usize) -> Vec<CurveAtom> {
    let fine = curve.atoms(1);
    let count = count.clamp(1, fine.len());
    (0..count)
        .map(|b| {
            let lo = b * fine.len() / count;
            let hi = (b + 1) * fine.len() / count;
            let mut a = fine[(lo + hi) / 2];
            a.weight = fine[lo..hi].iter().map(|x| x.weight).sum();
            a
        })
        .collect()
}

/// Coarse atoms of the family pushed by `word`, with pushed arc coordinates.
fn pushed_atoms(
    law: &GeneratorLaw,
    family: &CurveFamily,
    word: &[usize],
    count: usize,
    group: u32,
) -> Vec<LabeledAtom> {
    let mut out = Vec::new();
    for (ci, (c, w)) in family.curves.iter().zip(&family.weights).enumerate() {
        let atoms = coarse_atoms(c, count);
        let pushed: Vec<(TorusPoint, f64)> = atoms
            .par_iter()
            .map(|a| {
                let (q, log_e) = push_tangent(law, word, a.pos, a.tangent);
                (q, log_e.exp())
            })
            .collect();
        let mut arc = 0.0;
        for k in 0..atoms.len() {
            if k > 0 {
                arc += 0.5 * (pushed[k - 1].1 + pushed[k].1) * (atoms[k].arc - atoms[k - 1].arc);
            }
            out.push(LabeledAtom {
                pos: pushed[k].0,
                weight: w * atoms[k].weight,
                curve: ci as u32,
                group,
                arc,
            });
        }
    }
    out
}

/// Which ordered atom pairs a crossing sum counts.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PairFilter {
    /// Same group, excluding pairs on the same sheet.
    SameGroupOtherSheet(f64),
    /// Different groups.
    OtherGroup,
}

/// `rho_c^-4 sum a_k a_l |B(x_k) cap B(x_l)|` over the ordered pairs selected by `filter`.
fn crossing_sum(atoms: &[LabeledAtom], rho_c: f64, filter: PairFilter) -> Result<f64> {
    if atoms.is_empty() {
        return Ok(0.0);
    }
    let cloud = PointCloudMeasure::new(atoms.iter().map(|a| (a.pos, a.weight)).collect())?;
    let parts: Vec<f64> = atoms
        .par_iter()
        .enumerate()
        .map(|(k, a)| {
            let mut s = 0.0;
            cloud.for_each_within(a.pos, 2.0 * rho_c, |l, d| {
                if l == k {
                    return;
                }
                let b = &atoms[l];
                let keep = match filter {
                    PairFilter::SameGroupOtherSheet(sheet) => {
                        a.group == b.group
                            && !(a.curve == b.curve && (a.arc - b.arc).abs() <= sheet)
                    }
                    PairFilter::OtherGroup => a.group != b.group,
                };
                if keep {
                    s += b.weight * lens_area(d, rho_c);
                }
            });
            a.weight * s
        })
        .collect();
    Ok(parts.iter().sum::<f64>() / rho_c.powi(4))
}

/// Same-sheet radius in pushed arc length.
fn sheet_radius(rho_c: f64) -> f64 {
    4.0 * rho_c
}

/// Self and crossing parts of `|(f^n_w)_* nu|^2_rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParts {
    pub self_term: f64,
    pub cross_term: f64,
}

impl NormParts {
    pub fn total(&self) -> f64 {
        self.self_term + self.cross_term
    }
}

/// Options shared by the harness norm evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOptions {
    pub rho_c: f64,
    pub per_interval: usize,
    pub cross_atoms: usize,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self {
            rho_c: DEFAULT_RHO_C,
            per_interval: DEFAULT_PER_INTERVAL,
            cross_atoms: DEFAULT_CROSS_ATOMS,
        }
    }
}

/// `|(f^n_w)_* nu|^2_rho` split into the self term at `rho` and the crossing term at `rho_c`.
pub fn pushed_norm_sq(
    law: &GeneratorLaw,
    family: &CurveFamily,
    word: &[usize],
    rho: f64,
    opts: &NormOptions,
) -> Result<NormParts> {
    if !(rho > 0.0) {
        return Err(LabError::InvalidArgument("rho must be positive".into()));
    }
    let s = self_integral(law, family, word, opts.per_interval);
    let atoms = pushed_atoms(law, family, word, opts.cross_atoms, 0);
    let x = crossing_sum(
        &atoms,
        opts.rho_c,
        PairFilter::SameGroupOtherSheet(sheet_radius(opts.rho_c)),
    )?;
    Ok(NormParts { self_term: SELF_CONST * s / rho, cross_term: x })
}

/// Largest `C3'` seen over sampled derivatives `M = Df^n_w(x)`, `n <= n_max`:
/// the ratio of `|M|` to the least stretch of a line in `C^u`, and the same for `M^-1`
/// and `C^s`.
pub fn fit_c3_prime(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    n_max: usize,
    samples: usize,
    seed: u64,
) -> f64 {
    let us = cones.unstable.sample(64);
    let ss = cones.stable.sample(64);
    let parts: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = task_rng(seed, k as u64);
            let n = rng.gen_range(1..=n_max.max(1));
            let x = TorusPoint::new(rng.gen(), rng.gen());
            let word = law.sample_indices(n, &mut rng);
            let m = law.compose_differential(&word, x).m;
            let mi = inv2(&m);
            let least_u =
                us.iter().map(|v| (m * v).norm() / v.norm()).fold(f64::INFINITY, f64::min);
            let least_s =
                ss.iter().map(|v| (mi * v).norm() / v.norm()).fold(f64::INFINITY, f64::min);
            (op_norm(&m) / least_u).max(op_norm(&mi) / least_s)
        })
        .collect();
    parts.into_iter().fold(1.0, f64::max)
}

/// Constants of the key estimate and the Lasota–Yorke window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnessConstants {
    pub k0: f64,
    pub c0pp: f64,
    pub c3_prime: f64,
    pub c3: f64,
    pub c9: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub c10: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub lambda_s: f64,
    pub lambda_s_plus: f64,
    pub lambda_u_minus: f64,
    pub lambda_u_plus: f64,
}

impl HarnessConstants {
    /// `C3 = C3' C0''`, `C9 = 2 C3' / C0''`,
    /// `rho0 = min{1/100, 3/(4 K0), sin(theta0/2)/(10 C3), 1/(10 C3')} / 2`, `rho1 = rho0 / 4`.
    pub fn derive(
        cert: &CertReport,
        k0: f64,
        c3_prime: f64,
        trans: &TransversalityConstants,
        epsilon: f64,
    ) -> Self {
        let c0pp = cert.c0pp;
        let c3 = c3_prime * c0pp;
        let rho0 = 0.5
            * [
                0.01,
                3.0 / (4.0 * k0),
                (cert.theta0 / 2.0).sin() / (10.0 * c3),
                1.0 / (10.0 * c3_prime),
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        Self {
            k0,
            c0pp,
            c3_prime,
            c3,
            c9: 2.0 * c3_prime / c0pp,
            rho0,
            rho1: rho0 / 4.0,
            c10: trans.c10,
            lambda: trans.lambda,
            epsilon,
            lambda_s: cert.lambda_s(),
            lambda_s_plus: cert.lambda_s_plus,
            lambda_u_minus: cert.lambda_u_minus,
            lambda_u_plus: cert.lambda_u_plus,
        }
    }

    /// Upper end of the admissible scale window for the averaged inequality at step `n`.
    pub fn ly_window(&self, n: usize) -> f64 {
        let nf = n as f64;
        let a = self.c10 * self.lambda.powf(nf) * self.rho1 / 10.0;
        let b = self.lambda_s.powf(3.0 * nf) * self.rho1
            / (self.c3.powi(3) * self.lambda_u_plus.powf(2.0 * nf));
        a.min(b)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("k0", self.k0),
            ("c0pp", self.c0pp),
            ("c3_prime", self.c3_prime),
            ("c3", self.c3),
            ("c9", self.c9),
            ("rho0", self.rho0),
            ("rho1", self.rho1),
            ("c10", self.c10),
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// Sample sizes for [`fit_harness_constants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub k0_probe: usize,
    pub k0_samples: usize,
    pub c3_n_max: usize,
    pub c3_samples: usize,
    pub holder_pairs: usize,
    pub holder_n_trunc: usize,
    pub fiber_n: usize,
    pub fiber_words: usize,
    pub profile_levels: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            k0_probe: 1,
            k0_samples: 10_000,
            c3_n_max: 20,
            c3_samples: 10_000,
            holder_pairs: 2_000,
            holder_n_trunc: 40,
            fiber_n: 12,
            fiber_words: 100_000,
            profile_levels: 40,
        }
    }
}

/// Harness constants together with the fitted inputs they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessFit {
    pub constants: HarnessConstants,
    pub k0: KZero,
    pub holder: HolderFit,
    pub alpha: f64,
    pub eta: f64,
}

impl HarnessFit {
    pub fn to_kv(&self) -> String {
        let mut s = self.constants.to_kv();
        for (k, v) in [
            ("k0_a", self.k0.a),
            ("k0_b", self.k0.b),
            ("l0", self.holder.l0),
            ("theta", self.holder.theta),
            ("alpha", self.alpha),
            ("eta", self.eta),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// Fits every empirical input of [`HarnessConstants`]: `K0`, `C3'`, the Hölder pair
/// `(L0, theta)` of the unstable field, and `(alpha, eta)` from a fiber profile at the
/// unstable-cone bisector seed, which fix the budget `epsilon`.
pub fn fit_harness_constants(
    law: &GeneratorLaw,
    cones: &ConeSystem,
    cert: &CertReport,
    settings: &FitSettings,
    seed: u64,
) -> Result<HarnessFit> {
    let k0 = compute_k0(law, cones, settings.k0_probe, settings.k0_samples, derive_seed(seed, 0))?;
    let c3_prime =
        fit_c3_prime(law, cones, settings.c3_n_max, settings.c3_samples, derive_seed(seed, 1));
    let holder = fit_unstable_holder(
        law,
        cones,
        cert,
        settings.holder_pairs,
        settings.holder_n_trunc,
        derive_seed(seed, 2),
    )?;
    let trans = TransversalityConstants::new(cert, &holder);
    let base = TorusPoint::new(0.3, 0.7);
    let fiber = push_fiber(
        law,
        cones,
        &bisector_seed(cones),
        settings.fiber_n,
        settings.fiber_words,
        base,
        derive_seed(seed, 3),
    )?;
    let profile = holder_profile(&fiber, &default_radii(settings.profile_levels))?;
    let eta = eta_from_profile(&profile, settings.fiber_n).unwrap_or(1.0);
    let alpha = if profile.degenerate { 0.0 } else { profile.alpha };
    let epsilon = epsilon_budget(cert, alpha, eta, holder.theta);
    let constants = HarnessConstants::derive(cert, k0.k0, c3_prime, &trans, epsilon);
    Ok(HarnessFit { constants, k0, holder, alpha, eta })
}

/// Both sides of the key estimate for one family and one word.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyEstimateOutcome {
    pub n: usize,
    pub rho: f64,
    /// Scale `C9 lambda_{s,+}^-n rho` of the right-hand side.
    pub rho_rhs: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
    pub lhs_parts: NormParts,
    pub rhs_parts: NormParts,
}

impl KeyEstimateOutcome {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.n, self.rho, self.lhs, self.rhs, self.pass)
    }
}

/// Default scales: `rho' = rho0 / 2` and `rho = lambda_s^n rho' / 2`.
pub fn default_key_scales(consts: &HarnessConstants, n: usize) -> (f64, f64) {
    let rho_prime = consts.rho0 / 2.0;
    (0.5 * consts.lambda_s.powf(n as f64) * rho_prime, rho_prime)
}

/// Evaluates `|(f^n_w)_* nu0|^2_rho <= e^{6 eps n} |nu0|^2_{C9 lambda_{s,+}^-n rho}`.
#[allow(clippy::too_many_arguments)]
pub fn key_estimate_check(
    law: &GeneratorLaw,
    consts: &HarnessConstants,
    family: &CurveFamily,
    word: &[usize],
    n: usize,
    rho: f64,
    rho_prime: f64,
    opts: &NormOptions,
) -> Result<KeyEstimateOutcome> {
    if word.len() != n {
        return Err(LabError::InvalidArgument(format!(
            "word has length {} but n = {n}",
            word.len()
        )));
    }
    if !(rho_prime > 0.0 && rho_prime < consts.rho0) {
        return Err(LabError::HypothesisViolated(format!(
            "rho' = {rho_prime} outside (0, rho0 = {})",
            consts.rho0
        )));
    }
    let top = consts.lambda_s.powf(n as f64) * rho_prime;
    if !(rho > 0.0 && rho < top) {
        return Err(LabError::HypothesisViolated(format!(
            "rho = {rho} outside (0, lambda_s^n rho' = {top})"
        )));
    }
    let need = 2.0 * consts.c3 * consts.lambda_s.powf(-(n as f64)) * rho;
    let have = family.min_length();
    if have < need {
        return Err(LabError::HypothesisViolated(format!(
            "shortest curve has length {have} < 2 C3 lambda_s^-n rho = {need}"
        )));
    }
    let rho_rhs = consts.c9 * consts.lambda_s_plus.powf(-(n as f64)) * rho;
    let lhs_parts = pushed_norm_sq(law, family, word, rho, opts)?;
    let rhs_parts = pushed_norm_sq(law, family, &[], rho_rhs, opts)?;
    let lhs = lhs_parts.total();
    let rhs = (6.0 * consts.epsilon * n as f64).exp() * rhs_parts.total();
    Ok(KeyEstimateOutcome {
        n,
        rho,
        rho_rhs,
        lhs,
        rhs,
        ratio: lhs / rhs,
        pass: lhs <= rhs,
        lhs_parts,
        rhs_parts,
    })
}

/// One step of the averaged inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyRow {
    pub n: usize,
    pub rho: f64,
    /// Estimate of `|mu^{*n} * nu'|^2_rho`.
    pub lhs: f64,
    /// `lambda_hat^n |nu'|^2_rho + C nu'(T^2)^2` with the fitted constants.
    pub rhs: f64,
    pub pass: bool,
    /// Diagonal self part `E_w[p_w self_w(rho)]`.
    pub diagonal: f64,
    /// Crossing part, the rest of `lhs`.
    pub crossing: f64,
    /// `|nu'|^2_rho` at the same scale.
    pub initial: f64,
}

/// Fitted `(lambda_hat, C)` and the per-step rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LyOutcome {
    pub rows: Vec<LyRow>,
    pub lambda_hat: f64,
    pub c_fit: f64,
    pub mass: f64,
}

impl LyOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HARNESS_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.n, r.rho, r.lhs, r.rhs, r.pass);
        }
        s
    }
}

/// Monte-Carlo evaluation of `|mu^{*n} * nu'|^2_rho` over `words` sampled words for each
/// `n` in `ns`, at `rho = ly_window(n) / 2`, followed by a fit of
/// `lambda_hat^n |nu'|^2_rho + C nu'(T^2)^2`.
///
/// With `p_w` the probability of a word, the diagonal `sum_w p_w^2 |nu_w|^2` is estimated
/// by `E_w[p_w |nu_w|^2]` and the off-diagonal part by the average inner product over
/// pairs of distinct samples.
pub fn lasota_yorke_check(
    law: &GeneratorLaw,
    consts: &HarnessConstants,
    family: &CurveFamily,
    ns: &[usize],
    words: usize,
    opts: &NormOptions,
    seed: u64,
) -> Result<LyOutcome> {
    if words < 2 {
        return Err(LabError::InvalidArgument("need at least two words".into()));
    }
    if ns.contains(&0) {
        return Err(LabError::InvalidArgument("steps must be positive".into()));
    }
    if family.min_length() < consts.rho1 {
        return Err(LabError::HypothesisViolated(format!(
            "shortest curve has length {} < rho1 = {}",
            family.min_length(),
            consts.rho1
        )));
    }
    let mass = family.mass();
    let s0 = self_integral(law, family, &[], opts.per_interval);
    let atoms0 = pushed_atoms(law, family, &[], opts.cross_atoms, 0);
    let x0 = crossing_sum(
        &atoms0,
        opts.rho_c,
        PairFilter::SameGroupOtherSheet(sheet_radius(opts.rho_c)),
    )?;
    struct Raw {
        n: usize,
        rho: f64,
        lhs: f64,
        diagonal: f64,
        crossing: f64,
        initial: f64,
    }
    let mut raws = Vec::with_capacity(ns.len());
    for (t, &n) in ns.iter().enumerate() {
        let rho = 0.5 * consts.ly_window(n);
        let step_seed = derive_seed(seed, t as u64);
        let sampled: Vec<Vec<usize>> =
            (0..words).map(|k| law.sample_indices(n, &mut task_rng(step_seed, k as u64))).collect();
        let mut diag_self = 0.0;
        let mut diag_cross = 0.0;
        let mut all_atoms = Vec::new();
        for (k, w) in sampled.iter().enumerate() {
            let p = law.log_probability(w).exp();
            diag_self += p * SELF_CONST * self_integral(law, family, w, opts.per_interval) / rho;
            let atoms = pushed_atoms(law, family, w, opts.cross_atoms, k as u32);
            diag_cross += p * crossing_sum(
                &atoms,
                opts.rho_c,
                PairFilter::SameGroupOtherSheet(sheet_radius(opts.rho_c)),
            )?;
            all_atoms.extend(atoms);
        }
        let wf = words as f64;
        diag_self /= wf;
        diag_cross /= wf;
        let off = crossing_sum(&all_atoms, opts.rho_c, PairFilter::OtherGroup)? / (wf * (wf - 1.0));
        raws.push(Raw {
            n,
            rho,
            lhs: diag_self + diag_cross + off,
            diagonal: diag_self,
            crossing: diag_cross + off,
            initial: SELF_CONST * s0 / rho + x0,
        });
    }
    let m2 = mass * mass;
    // taken from the crossing parts directly: lhs - diagonal cancels catastrophically
    let c_fit = raws.iter().map(|r| r.crossing / m2).fold(0.0, f64::max);
    let lambda_hat = raws
        .iter()
        .map(|r| ((r.lhs - c_fit * m2).max(0.0) / r.initial).powf(1.0 / r.n as f64))
        .fold(0.0, f64::max);
    let rows = raws
        .iter()
        .map(|r| {
            let rhs = lambda_hat.powf(r.n as f64) * r.initial + c_fit * m2;
            LyRow {
                n: r.n,
                rho: r.rho,
                lhs: r.lhs,
                rhs,
                pass: r.lhs <= rhs * (1.0 + 1e-12),
                diagonal: r.diagonal,
                crossing: r.crossing,
                initial: r.initial,
            }
        })
        .collect();
    Ok(LyOutcome { rows, lambda_hat, c_fit, mass })
}

/// `(m, |(1/m) sum_{i<m} mu^{*i} * nu'|^2_rho)` at `m = 1, 2, 4, ..., <= n_max`.
///
/// Coarse atoms of the family are pushed by `words_per_atom` independent words; the
/// `i = 0` term is deposited once with the full atom weight. Norms are evaluated on a
/// `grid_n` histogram against Lebesgue measure.
#[allow(clippy::too_many_arguments)]
pub fn cesaro_norm_bound(
    law: &GeneratorLaw,
    family: &CurveFamily,
    n_max: usize,
    rho: f64,
    atoms_per_curve: usize,
    words_per_atom: usize,
    grid_n: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if n_max == 0 || words_per_atom == 0 || grid_n == 0 {
        return Err(LabError::InvalidArgument(
            "n_max, words_per_atom and grid_n must be positive".into(),
        ));
    }
    let levels = (usize::BITS - n_max.leading_zeros()) as usize; // checkpoints 2^0 .. 2^(levels-1)
    let horizon = 1usize << (levels - 1);
    let atoms: Vec<(TorusPoint, f64)> = family
        .curves
        .iter()
        .zip(&family.weights)
        .flat_map(|(c, w)| {
            coarse_atoms(c, atoms_per_curve)
                .into_iter()
                .map(move |a| (TorusPoint::from_vec(a.pos), w * a.weight))
        })
        .collect();
    let cells = grid_n * grid_n;
    let bucket_of = |i: usize| (usize::BITS - i.leading_zeros()) as usize; // 0 -> 0, [2^(b-1), 2^b) -> b
    let mut buckets = vec![0.0; levels * cells];
    for &(p, a) in &atoms {
        buckets[crate::measure::grid_index(grid_n, p)] += a;
    }
    // fixed task partition and merge order keep the sums independent of thread count
    let tasks = atoms.len() * words_per_atom;
    let chunk = tasks.div_ceil(64).max(1);
    let ranges: Vec<(usize, usize)> =
        (0..tasks).step_by(chunk).map(|s| (s, (s + chunk).min(tasks))).collect();
    let batch = rayon::current_num_threads().max(1);
    for group in ranges.chunks(batch) {
        let parts: Vec<Vec<f64>> = group
            .par_iter()
            .map(|&(s, e)| {
                let mut local = vec![0.0; levels * cells];
                for task in s..e {
                    let (p, a) = atoms[task / words_per_atom];
                    let w = a / words_per_atom as f64;
                    let mut rng = task_rng(seed, task as u64);
                    let mut q = p;
                    for i in 1..horizon {
                        q = law.maps()[law.sample_index(&mut rng)].apply(q);
                        local[bucket_of(i) * cells + crate::measure::grid_index(grid_n, q)] += w;
                    }
                }
                local
            })
            .collect();
        for part in parts {
            for (b, v) in buckets.iter_mut().zip(part) {
                *b += v;
            }
        }
    }
    let mut out = Vec::with_capacity(levels);
    let mut cumulative = vec![0.0; cells];
    for b in 0..levels {
        for (c, v) in cumulative.iter_mut().zip(&buckets[b * cells..(b + 1) * cells]) {
            *c += v;
        }
        let m = 1usize << b;
        let avg =
            GridMeasure::from_masses(grid_n, cumulative.iter().map(|v| v / m as f64).collect())?;
        let norm = rho_norm(&avg, rho, &SmoothReference::Lebesgue, grid_n)?;
        out.push((m, norm * norm));
    }
    Ok(out)
}

/// `16/(3 rho) int zeta^2 ds` for one unpushed curve, a closed form for tests.
pub fn curve_self_term(curve: &CurveJet, rho: f64, per_interval: usize) -> f64 {
    SELF_CONST / rho * curve.atoms(per_interval).iter().map(|a| a.weight * a.density).sum::<f64>()
}

/// The crossing term `pi^2 zeta1 zeta2 / sin(angle)` of two transverse straight pieces.
pub fn crossing_term(zeta1: f64, zeta2: f64, angle: f64) -> f64 {
    PI * PI * zeta1 * zeta2 / angle.sin().abs()
}
