//! Run configuration: a versioned JSON document, validated in full before any work starts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use torus_lab::cone::{Cone, ConeSystem, MIN_GRID};
use torus_lab::equidist::MAX_PERIOD;
use torus_lab::harness::{
    FitSettings, NormOptions, DEFAULT_CROSS_ATOMS, DEFAULT_PER_INTERVAL, DEFAULT_RHO_C,
};
use torus_lab::measure::CELLS_PER_RADIUS;
use torus_lab::random_system::GeneratorLaw;
use torus_lab::torus::{FourierMode, Mat2, TorusMap, TorusPoint};

use crate::CliError;

/// The only schema version this build reads.
pub const SCHEMA_VERSION: u32 = 1;

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> CliError {
    CliError::ConfigInvalid { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub maps: Vec<MapConfig>,
    /// Selection probabilities; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Cone system; the standard one when absent.
    #[serde(default)]
    pub cones: Option<ConeConfig>,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub stationary: StationarySection,
    #[serde(default)]
    pub rho_norm: RhoNormSection,
    #[serde(default)]
    pub curve_evolve: CurveEvolveSection,
    #[serde(default)]
    pub harness: HarnessSection,
    #[serde(default)]
    pub key_estimate: KeyEstimateSection,
    #[serde(default)]
    pub lasota_yorke: LasotaYorkeSection,
    #[serde(default)]
    pub holder: HolderSection,
    #[serde(default)]
    pub transversality: TransversalitySection,
    #[serde(default)]
    pub expansion: ExpansionSection,
    #[serde(default)]
    pub equidistribute: EquidistributeSection,
    #[serde(default)]
    pub periodic: PeriodicSection,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub matrix: [[i64; 2]; 2],
    #[serde(default)]
    pub modes: Vec<FourierMode>,
    #[serde(default)]
    pub epsilon: f64,
}

/// Cones as pairs of boundary slopes (counter-clockwise, `null` for vertical).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeConfig {
    pub stable: [Option<f64>; 2],
    pub unstable: [Option<f64>; 2],
    #[serde(default = "identity")]
    pub metric_s: [[f64; 2]; 2],
    #[serde(default = "identity")]
    pub metric_u: [[f64; 2]; 2],
}

fn identity() -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, 1.0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub grid_n: usize,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self { grid_n: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationarySection {
    pub x0: [f64; 2],
    pub n: usize,
    pub words: usize,
    pub burn_in: usize,
    pub grid_n: usize,
    /// Resolution of the total-variation comparison with Lebesgue measure.
    pub compare_resolution: usize,
    /// Optional second route: Cesàro averages along an unstable segment.
    pub srb: Option<SrbSection>,
}

impl Default for StationarySection {
    fn default() -> Self {
        Self {
            x0: [0.3, 0.4],
            n: 1100,
            words: 10_000,
            burn_in: 100,
            grid_n: 64,
            compare_resolution: 64,
            srb: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrbSection {
    pub start: [f64; 2],
    pub length: f64,
    pub n: usize,
    pub samples: usize,
}

impl Default for SrbSection {
    fn default() -> Self {
        Self { start: [0.2, 0.6], length: 0.2, n: 1000, samples: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    #[default]
    Uniform,
    Dirac {
        point: [f64; 2],
    },
    /// The histogram of the `stationary` section, at the `rho_norm` grid.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    /// Lattice quadrature of ball masses of a histogram.
    #[default]
    Quadrature,
    /// Closed-form lens sums over atoms (Lebesgue reference only).
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RhoNormSection {
    pub measure: MeasureSpec,
    pub method: NormMethod,
    /// Scales in decreasing order.
    pub scales: Vec<f64>,
    pub grid_n: usize,
    pub quad_n: usize,
    /// Exit with a finding when the largest halving ratio exceeds this.
    pub ratio_bound: Option<f64>,
    /// Also run the pipeline for the first map alone.
    pub contrast: bool,
}

impl Default for RhoNormSection {
    fn default() -> Self {
        Self {
            measure: MeasureSpec::Uniform,
            method: NormMethod::Quadrature,
            scales: vec![0.125, 0.0625, 0.03125, 0.015625, 0.0078125],
            grid_n: 1024,
            quad_n: 512,
            ratio_bound: None,
            contrast: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveEvolveSection {
    pub curves: usize,
    pub steps: usize,
    pub length: f64,
    pub k0_probe: usize,
    pub k0_samples: usize,
}

impl Default for CurveEvolveSection {
    fn default() -> Self {
        Self { curves: 1000, steps: 50, length: 0.2, k0_probe: 1, k0_samples: 10_000 }
    }
}

/// Inputs shared by the harness commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub cert_grid: usize,
    pub k0_probe: usize,
    pub k0_samples: usize,
    pub c3_n_max: usize,
    pub c3_samples: usize,
    pub holder_pairs: usize,
    pub holder_n_trunc: usize,
    pub fiber_n: usize,
    pub fiber_words: usize,
    pub profile_levels: usize,
    pub family_curves: usize,
    pub family_lengths: [f64; 2],
    pub family_lip: f64,
    pub rho_c: f64,
    pub per_interval: usize,
    pub cross_atoms: usize,
}

impl Default for HarnessSection {
    fn default() -> Self {
        let f = FitSettings::default();
        Self {
            cert_grid: MIN_GRID,
            k0_probe: f.k0_probe,
            k0_samples: f.k0_samples,
            c3_n_max: f.c3_n_max,
            c3_samples: f.c3_samples,
            holder_pairs: f.holder_pairs,
            holder_n_trunc: f.holder_n_trunc,
            fiber_n: f.fiber_n,
            fiber_words: f.fiber_words,
            profile_levels: f.profile_levels,
            family_curves: 3,
            family_lengths: [0.1, 0.3],
            family_lip: 1.0,
            rho_c: DEFAULT_RHO_C,
            per_interval: DEFAULT_PER_INTERVAL,
            cross_atoms: DEFAULT_CROSS_ATOMS,
        }
    }
}

impl HarnessSection {
    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            k0_probe: self.k0_probe,
            k0_samples: self.k0_samples,
            c3_n_max: self.c3_n_max,
            c3_samples: self.c3_samples,
            holder_pairs: self.holder_pairs,
            holder_n_trunc: self.holder_n_trunc,
            fiber_n: self.fiber_n,
            fiber_words: self.fiber_words,
            profile_levels: self.profile_levels,
        }
    }

    pub fn norm_options(&self) -> NormOptions {
        NormOptions {
            rho_c: self.rho_c,
            per_interval: self.per_interval,
            cross_atoms: self.cross_atoms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyEstimateSection {
    pub families: usize,
    pub n: usize,
}

impl Default for KeyEstimateSection {
    fn default() -> Self {
        Self { families: 50, n: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LasotaYorkeSection {
    pub ns: Vec<usize>,
    pub words: usize,
    pub cesaro: Option<CesaroSection>,
}

impl Default for LasotaYorkeSection {
    fn default() -> Self {
        Self { ns: vec![10, 15, 20], words: 64, cesaro: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CesaroSection {
    pub n_max: usize,
    pub rho: f64,
    pub atoms_per_curve: usize,
    pub words_per_atom: usize,
    pub grid_n: usize,
}

impl Default for CesaroSection {
    fn default() -> Self {
        Self { n_max: 4096, rho: 0.0625, atoms_per_curve: 256, words_per_atom: 16, grid_n: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderSection {
    pub point: [f64; 2],
    pub ns: Vec<usize>,
    pub words: usize,
    pub levels: usize,
}

impl Default for HolderSection {
    fn default() -> Self {
        Self { point: [0.3, 0.7], ns: vec![12, 16], words: 100_000, levels: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransversalitySection {
    pub point: [f64; 2],
    pub ns: Vec<usize>,
    pub delta: f64,
    pub references: usize,
    pub trials: usize,
}

impl Default for TransversalitySection {
    fn default() -> Self {
        Self { point: [0.3, 0.7], ns: (4..=14).collect(), delta: 0.0, references: 50, trials: 4000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionSection {
    pub max_n: usize,
    pub space_grid: usize,
    pub dir_grid: usize,
    /// Repeat the search with both sample grids doubled.
    pub check_doubling: bool,
}

impl Default for ExpansionSection {
    fn default() -> Self {
        Self { max_n: 12, space_grid: 8, dir_grid: 32, check_doubling: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquidistributeSection {
    /// Explicit start points; random ones are drawn when empty.
    pub starts: Vec<[f64; 2]>,
    pub random_starts: usize,
    pub checkpoints: Vec<usize>,
    pub words: usize,
    pub resolution: usize,
    pub reference: StationarySection,
}

impl Default for EquidistributeSection {
    fn default() -> Self {
        Self {
            starts: Vec::new(),
            random_starts: 5,
            checkpoints: vec![10, 100],
            words: 20_000,
            resolution: 32,
            reference: StationarySection { n: 400, words: 5_000, ..StationarySection::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodicSection {
    pub f: usize,
    /// Second map; the second generator (or the first if there is only one) when absent.
    pub g: Option<usize>,
    pub period_max: usize,
}

impl Default for PeriodicSection {
    fn default() -> Self {
        Self { f: 0, g: None, period_max: 8 }
    }
}

impl PeriodicSection {
    pub fn g_index(&self, maps: usize) -> usize {
        self.g.unwrap_or(usize::from(maps > 1))
    }
}

/// A configuration that passed validation, with the objects it describes.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: RunConfig,
    pub law: GeneratorLaw,
    pub cones: ConeSystem,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
        Self::from_json(&text)
    }

    /// Builds the law and the cones and checks every section.
    pub fn validate(self) -> Result<Validated, CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.maps.is_empty() {
            return Err(invalid("maps", "need at least one map"));
        }
        let maps = self
            .maps
            .iter()
            .enumerate()
            .map(|(i, m)| {
                TorusMap::new(m.matrix, m.modes.clone(), m.epsilon)
                    .map_err(|e| invalid(format!("maps[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let law = match &self.weights {
            None => GeneratorLaw::uniform(maps),
            Some(w) => {
                if w.len() != self.maps.len() {
                    return Err(invalid(
                        "weights",
                        format!("need {} weights, got {}", self.maps.len(), w.len()),
                    ));
                }
                GeneratorLaw::new(maps, w.clone())
            }
        }
        .map_err(|e| invalid("weights", e.to_string()))?;
        let cones = match &self.cones {
            None => ConeSystem::standard(),
            Some(c) => build_cones(c)?,
        };
        self.check_sections(law.len())?;
        Ok(Validated { config: self, law, cones })
    }

    fn check_sections(&self, maps: usize) -> Result<(), CliError> {
        if self.certify.grid_n < MIN_GRID {
            return Err(invalid("certify.grid_n", format!("must be at least {MIN_GRID}")));
        }
        check_stationary("stationary", &self.stationary)?;
        check_rho_norm(&self.rho_norm)?;
        check_curve_evolve(&self.curve_evolve)?;
        check_harness(&self.harness)?;

        let k = &self.key_estimate;
        positive("key_estimate.families", k.families)?;
        positive("key_estimate.n", k.n)?;

        let ly = &self.lasota_yorke;
        nonempty_positive("lasota_yorke.ns", &ly.ns)?;
        if ly.words < 2 {
            return Err(invalid("lasota_yorke.words", "need at least two words"));
        }
        if let Some(c) = &ly.cesaro {
            positive("lasota_yorke.cesaro.n_max", c.n_max)?;
            radius("lasota_yorke.cesaro.rho", c.rho)?;
            positive("lasota_yorke.cesaro.atoms_per_curve", c.atoms_per_curve)?;
            positive("lasota_yorke.cesaro.words_per_atom", c.words_per_atom)?;
            positive("lasota_yorke.cesaro.grid_n", c.grid_n)?;
            resolves("lasota_yorke.cesaro.rho", c.rho, c.grid_n)?;
        }

        let h = &self.holder;
        point("holder.point", h.point)?;
        nonempty_positive("holder.ns", &h.ns)?;
        positive("holder.words", h.words)?;
        positive("holder.levels", h.levels)?;

        let t = &self.transversality;
        point("transversality.point", t.point)?;
        nonempty_positive("transversality.ns", &t.ns)?;
        if !(t.delta.is_finite() && t.delta >= 0.0) {
            return Err(invalid("transversality.delta", "must be finite and non-negative"));
        }
        positive("transversality.references", t.references)?;
        positive("transversality.trials", t.trials)?;

        let e = &self.expansion;
        positive("expansion.max_n", e.max_n)?;
        positive("expansion.space_grid", e.space_grid)?;
        positive("expansion.dir_grid", e.dir_grid)?;

        let q = &self.equidistribute;
        for (i, p) in q.starts.iter().enumerate() {
            point(&format!("equidistribute.starts[{i}]"), *p)?;
        }
        if q.starts.is_empty() {
            positive("equidistribute.random_starts", q.random_starts)?;
        }
        nonempty_positive("equidistribute.checkpoints", &q.checkpoints)?;
        if q.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("equidistribute.checkpoints", "must be strictly increasing"));
        }
        positive("equidistribute.words", q.words)?;
        positive("equidistribute.resolution", q.resolution)?;
        check_stationary("equidistribute.reference", &q.reference)?;

        let p = &self.periodic;
        if p.f >= maps {
            return Err(invalid(
                "periodic.f",
                format!("map index out of range (have {maps} maps)"),
            ));
        }
        if p.g_index(maps) >= maps {
            return Err(invalid(
                "periodic.g",
                format!("map index out of range (have {maps} maps)"),
            ));
        }
        if p.period_max == 0 || p.period_max > MAX_PERIOD {
            return Err(invalid("periodic.period_max", format!("must lie in 1..={MAX_PERIOD}")));
        }
        Ok(())
    }
}

fn build_cones(c: &ConeConfig) -> Result<ConeSystem, CliError> {
    let stable = Cone::from_slopes(c.stable[0], c.stable[1])
        .map_err(|e| invalid("cones.stable", e.to_string()))?;
    let unstable = Cone::from_slopes(c.unstable[0], c.unstable[1])
        .map_err(|e| invalid("cones.unstable", e.to_string()))?;
    let m = |a: [[f64; 2]; 2]| Mat2::new(a[0][0], a[0][1], a[1][0], a[1][1]);
    ConeSystem::new(stable, unstable, m(c.metric_s), m(c.metric_u))
        .map_err(|e| invalid("cones", e.to_string()))
}

fn positive(field: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(invalid(field, "must be positive"));
    }
    Ok(())
}

fn nonempty_positive(field: &str, v: &[usize]) -> Result<(), CliError> {
    if v.is_empty() || v.contains(&0) {
        return Err(invalid(field, "must be a non-empty list of positive integers"));
    }
    Ok(())
}

fn point(field: &str, p: [f64; 2]) -> Result<(), CliError> {
    if p.iter().any(|c| !c.is_finite()) {
        return Err(invalid(field, "coordinates must be finite"));
    }
    Ok(())
}

fn radius(field: &str, r: f64) -> Result<(), CliError> {
    if !(r > 0.0 && r < 0.25) {
        return Err(invalid(field, format!("radius {r} must lie in (0, 1/4)")));
    }
    Ok(())
}

/// Histogram ball masses need cells no larger than `rho / 8`.
fn resolves(field: &str, rho: f64, grid_n: usize) -> Result<(), CliError> {
    let cell = 1.0 / grid_n as f64;
    if cell > rho / CELLS_PER_RADIUS * (1.0 + 1e-12) {
        return Err(invalid(
            field,
            format!("grid cell {cell} is larger than rho/8 for rho = {rho}"),
        ));
    }
    Ok(())
}

fn check_stationary(name: &str, s: &StationarySection) -> Result<(), CliError> {
    point(&format!("{name}.x0"), s.x0)?;
    if s.n <= s.burn_in {
        return Err(invalid(format!("{name}.n"), format!("must exceed burn_in = {}", s.burn_in)));
    }
    positive(&format!("{name}.words"), s.words)?;
    positive(&format!("{name}.grid_n"), s.grid_n)?;
    positive(&format!("{name}.compare_resolution"), s.compare_resolution)?;
    if let Some(srb) = &s.srb {
        point(&format!("{name}.srb.start"), srb.start)?;
        if !(srb.length > 0.0 && srb.length.is_finite()) {
            return Err(invalid(format!("{name}.srb.length"), "must be positive"));
        }
        positive(&format!("{name}.srb.n"), srb.n)?;
        positive(&format!("{name}.srb.samples"), srb.samples)?;
    }
    Ok(())
}

fn check_rho_norm(r: &RhoNormSection) -> Result<(), CliError> {
    if r.scales.is_empty() {
        return Err(invalid("rho_norm.scales", "need at least one scale"));
    }
    for (i, &s) in r.scales.iter().enumerate() {
        radius(&format!("rho_norm.scales[{i}]"), s)?;
    }
    if r.scales.windows(2).any(|w| w[0] <= w[1]) {
        return Err(invalid("rho_norm.scales", "must be strictly decreasing"));
    }
    positive("rho_norm.grid_n", r.grid_n)?;
    positive("rho_norm.quad_n", r.quad_n)?;
    let gridded = !matches!((r.method, r.measure), (NormMethod::Exact, MeasureSpec::Dirac { .. }));
    if gridded && r.method == NormMethod::Quadrature {
        for (i, &s) in r.scales.iter().enumerate() {
            resolves(&format!("rho_norm.scales[{i}]"), s, r.grid_n)?;
        }
    }
    if let MeasureSpec::Dirac { point: p } = r.measure {
        point("rho_norm.measure.point", p)?;
    }
    if r.contrast && r.measure != MeasureSpec::Stationary {
        return Err(invalid("rho_norm.contrast", "needs the stationary measure"));
    }
    if let Some(b) = r.ratio_bound {
        if !(b > 0.0) {
            return Err(invalid("rho_norm.ratio_bound", "must be positive"));
        }
    }
    Ok(())
}

fn check_curve_evolve(c: &CurveEvolveSection) -> Result<(), CliError> {
    positive("curve_evolve.curves", c.curves)?;
    positive("curve_evolve.steps", c.steps)?;
    if !(c.length > 0.0 && c.length < 1.0) {
        return Err(invalid("curve_evolve.length", "must lie in (0, 1)"));
    }
    positive("curve_evolve.k0_probe", c.k0_probe)?;
    positive("curve_evolve.k0_samples", c.k0_samples)
}

fn check_harness(h: &HarnessSection) -> Result<(), CliError> {
    if h.cert_grid < MIN_GRID {
        return Err(invalid("harness.cert_grid", format!("must be at least {MIN_GRID}")));
    }
    for (f, v) in [
        ("harness.k0_probe", h.k0_probe),
        ("harness.k0_samples", h.k0_samples),
        ("harness.c3_n_max", h.c3_n_max),
        ("harness.c3_samples", h.c3_samples),
        ("harness.holder_pairs", h.holder_pairs),
        ("harness.holder_n_trunc", h.holder_n_trunc),
        ("harness.fiber_n", h.fiber_n),
        ("harness.fiber_words", h.fiber_words),
        ("harness.profile_levels", h.profile_levels),
        ("harness.family_curves", h.family_curves),
        ("harness.per_interval", h.per_interval),
        ("harness.cross_atoms", h.cross_atoms),
    ] {
        positive(f, v)?;
    }
    let [lo, hi] = h.family_lengths;
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(invalid("harness.family_lengths", "need 0 < min <= max < 1"));
    }
    if !(h.family_lip >= 0.0 && h.family_lip.is_finite()) {
        return Err(invalid("harness.family_lip", "must be finite and non-negative"));
    }
    radius("harness.rho_c", h.rho_c)
}

pub fn torus_point(p: [f64; 2]) -> TorusPoint {
    TorusPoint::new(p[0], p[1])
}
