//! One function per command. Each returns the summary pairs and CSV files it produced.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use torus_lab::cone::{certify, certify_with_rows, CertReport, GRID_CSV_HEADER};
use torus_lab::curve::{compute_k0, push_curve, CurveJet, PushOptions, DEFAULT_SPACING};
use torus_lab::equidist::{common_periodic_points, equidistribution_run, min_cell_mass};
use torus_lab::harness::{
    cesaro_norm_bound, default_key_scales, fit_harness_constants, key_estimate_check,
    lasota_yorke_check, CurveFamily, HarnessFit,
};
use torus_lab::measure::{
    coarse_distance, estimate_from_lebesgue, estimate_stationary, max_halving_ratio, rho_norm,
    rho_norm_lebesgue_exact, srb_from_curve, GridMeasure, PointCloudMeasure, SmoothReference,
    TorusMeasure,
};
use torus_lab::projective::{
    bisector_seed, default_radii, fit_unstable_holder, geometric_decay_fit, holder_profile,
    nontransverse_mass_averaged, push_fiber, TransversalityConstants, TRANSVERSALITY_CSV_HEADER,
};
use torus_lab::random_system::{
    derive_seed, sample_word, smallest_expanding_n, task_rng, GeneratorLaw,
};
use torus_lab::{LabError, Result};

use crate::config::{torus_point, MeasureSpec, NormMethod, StationarySection, Validated};
use crate::{Command, Outcome};

pub const CONDITIONS_CSV_HEADER: &str = "condition,passed";
pub const STATIONARY_CSV_HEADER: &str = "i,j,mass";
pub const RHO_NORM_CSV_HEADER: &str = "rho,norm";
pub const EVOLVE_CSV_HEADER: &str =
    "curve,max_curvature,length,mass,discarded_mass,mass_error,fitted_lipschitz";
pub const KEY_CSV_HEADER: &str = "family,n,rho,rho_rhs,lhs,rhs,ratio,pass";
pub const LY_CSV_HEADER: &str = "n,rho,lhs,rhs,pass,diagonal,crossing,initial";
pub const CESARO_CSV_HEADER: &str = "m,norm_sq";
pub const HOLDER_CSV_HEADER: &str = "n,alpha,c5,fitted_rows,floor_radius,degenerate";
pub const HOLDER_PROFILE_CSV_HEADER: &str = "n,r,mass";
pub const EXPANSION_CSV_HEADER: &str = "n,margin";
pub const EQUIDIST_RUNS_CSV_HEADER: &str = "start,x0,y0,n,distance";

pub fn dispatch(command: Command, v: &Validated) -> Result<Outcome> {
    match command {
        Command::Certify => cmd_certify(v),
        Command::Stationary => cmd_stationary(v),
        Command::RhoNorm => cmd_rho_norm(v),
        Command::CurveEvolve => cmd_curve_evolve(v),
        Command::KeyEstimate => cmd_key_estimate(v),
        Command::LasotaYorke => cmd_lasota_yorke(v),
        Command::Holder => cmd_holder(v),
        Command::Transversality => cmd_transversality(v),
        Command::Expansion => cmd_expansion(v),
        Command::Equidistribute => cmd_equidistribute(v),
        Command::Periodic => cmd_periodic(v),
    }
}

fn grid_csv(nu: &GridMeasure) -> String {
    let mut s = String::with_capacity(nu.n() * nu.n() * 24);
    s.push_str(STATIONARY_CSV_HEADER);
    s.push('\n');
    for i in 0..nu.n() {
        for j in 0..nu.n() {
            let _ = writeln!(s, "{i},{j},{}", nu.cell(i, j));
        }
    }
    s
}

fn cmd_certify(v: &Validated) -> Result<Outcome> {
    let (report, rows) = certify_with_rows(v.law.maps(), &v.cones, v.config.certify.grid_n)?;
    let mut o = Outcome::default();
    let mut cond = String::from(CONDITIONS_CSV_HEADER);
    cond.push('\n');
    for (k, p) in report.passed.iter().enumerate() {
        let _ = writeln!(cond, "C{},{p}", k + 1);
    }
    o.file("certify.csv", cond);
    let mut grid = String::from(GRID_CSV_HEADER);
    grid.push('\n');
    for r in &rows {
        grid.push_str(&r.csv_line());
        grid.push('\n');
    }
    o.file("grid.csv", grid);
    o.kv_block(&report.to_kv());
    o.finding = !report.all_passed();
    Ok(o)
}

fn stationary_of(
    law: &GeneratorLaw,
    s: &StationarySection,
    grid_n: usize,
    seed: u64,
) -> Result<GridMeasure> {
    estimate_stationary(law, torus_point(s.x0), s.n, s.words, s.burn_in, seed, grid_n)
}

fn cmd_stationary(v: &Validated) -> Result<Outcome> {
    let s = &v.config.stationary;
    let seed = v.config.seed;
    let nu = stationary_of(&v.law, s, s.grid_n, derive_seed(seed, 0))?;
    let leb = TorusMeasure::Grid(GridMeasure::lebesgue(s.grid_n));
    let g = TorusMeasure::Grid(nu.clone());
    let mut o = Outcome::default();
    o.kv("grid_n", s.grid_n);
    o.kv("samples", s.words * (s.n - s.burn_in));
    o.kv("tv_uniform", coarse_distance(&g, &leb, s.compare_resolution)?);
    o.kv("min_cell_mass", min_cell_mass(&nu, s.compare_resolution)?);
    o.file("stationary.csv", grid_csv(&nu));
    o.file("stationary.pgm", nu.to_pgm());
    if let Some(srb) = &s.srb {
        let seg = CurveJet::segment(
            torus_point(srb.start),
            v.cones.unstable.bisector(),
            srb.length,
            DEFAULT_SPACING,
        )?;
        let m = srb_from_curve(&v.law, &seg, srb.n, srb.samples, derive_seed(seed, 1), s.grid_n)?;
        let mg = TorusMeasure::Grid(m.clone());
        o.kv("srb_tv_stationary", coarse_distance(&mg, &g, s.compare_resolution)?);
        o.kv("srb_tv_uniform", coarse_distance(&mg, &leb, s.compare_resolution)?);
        o.file("srb.csv", grid_csv(&m));
    }
    Ok(o)
}

fn norm_curve(
    nu: &TorusMeasure,
    method: NormMethod,
    scales: &[f64],
    quad_n: usize,
) -> Result<Vec<(f64, f64)>> {
    let cloud = match (method, nu) {
        (NormMethod::Quadrature, _) => None,
        (NormMethod::Exact, TorusMeasure::Cloud(c)) => Some(c.clone()),
        (NormMethod::Exact, TorusMeasure::Grid(g)) => Some(g.to_cloud()?),
    };
    scales
        .iter()
        .map(|&r| {
            let n = match &cloud {
                Some(c) => rho_norm_lebesgue_exact(c, r)?,
                None => rho_norm(nu, r, &SmoothReference::Lebesgue, quad_n)?,
            };
            Ok((r, n))
        })
        .collect()
}

fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from(RHO_NORM_CSV_HEADER);
    s.push('\n');
    for (r, n) in curve {
        let _ = writeln!(s, "{r},{n}");
    }
    s
}

fn cmd_rho_norm(v: &Validated) -> Result<Outcome> {
    let r = &v.config.rho_norm;
    let seed = v.config.seed;
    let nu = match r.measure {
        MeasureSpec::Uniform => TorusMeasure::Grid(GridMeasure::lebesgue(r.grid_n)),
        MeasureSpec::Dirac { point } => {
            TorusMeasure::Cloud(PointCloudMeasure::dirac(torus_point(point)))
        }
        MeasureSpec::Stationary => TorusMeasure::Grid(stationary_of(
            &v.law,
            &v.config.stationary,
            r.grid_n,
            derive_seed(seed, 0),
        )?),
    };
    let curve = norm_curve(&nu, r.method, &r.scales, r.quad_n)?;
    let ratio = max_halving_ratio(&curve);
    let mut o = Outcome::default();
    o.kv("scales", curve.len());
    o.kv("max_halving_ratio", ratio);
    o.kv("min_norm", curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min));
    o.kv("max_norm", curve.iter().map(|c| c.1).fold(0.0, f64::max));
    o.file("rho_norm.csv", curve_csv(&curve));
    if r.contrast {
        let single = GeneratorLaw::new(vec![v.law.maps()[0].clone()], vec![1.0])?;
        let st = &v.config.stationary;
        let c = TorusMeasure::Grid(estimate_from_lebesgue(
            &single,
            st.n,
            st.words,
            st.burn_in,
            derive_seed(seed, 1),
            r.grid_n,
        )?);
        let cc = norm_curve(&c, r.method, &r.scales, r.quad_n)?;
        o.kv("contrast_max_halving_ratio", max_halving_ratio(&cc));
        o.file("rho_norm_contrast.csv", curve_csv(&cc));
    }
    if let Some(b) = r.ratio_bound {
        o.kv("ratio_bound", b);
        o.kv("within_bound", ratio <= b);
        o.finding = ratio > b;
    }
    Ok(o)
}

struct Evolved {
    max_curvature: f64,
    curve: CurveJet,
}

fn cmd_curve_evolve(v: &Validated) -> Result<Outcome> {
    let c = &v.config.curve_evolve;
    let seed = v.config.seed;
    let k0 = compute_k0(&v.law, &v.cones, c.k0_probe, c.k0_samples, derive_seed(seed, 0))?;
    let opts = PushOptions { resample: true, max_length: Some(c.length) };
    let runs = (0..c.curves)
        .into_par_iter()
        .map(|k| {
            let mut rng = task_rng(derive_seed(seed, 1), k as u64);
            let start = torus_lab::torus::TorusPoint::new(rng.gen(), rng.gen());
            let word = v.law.sample_indices(c.steps, &mut rng);
            let mut jet =
                CurveJet::segment(start, v.cones.unstable.bisector(), c.length, DEFAULT_SPACING)?;
            let mut max_curvature = jet.max_abs_curvature();
            for letter in word.chunks(1) {
                jet = push_curve(&v.law, &v.cones, &jet, letter, opts)?;
                max_curvature = max_curvature.max(jet.max_abs_curvature());
            }
            Ok(Evolved { max_curvature, curve: jet })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = String::from(EVOLVE_CSV_HEADER);
    table.push('\n');
    let (mut worst_k, mut worst_mass, mut worst_lip) = (0.0f64, 0.0f64, 0.0f64);
    for (k, r) in runs.iter().enumerate() {
        let mass = r.curve.mass();
        let discarded = r.curve.discarded_mass();
        let err = (mass + discarded - 1.0).abs();
        let lip = r.curve.fitted_lipschitz();
        worst_k = worst_k.max(r.max_curvature);
        worst_mass = worst_mass.max(err);
        worst_lip = worst_lip.max(lip);
        let _ = writeln!(
            table,
            "{k},{},{},{mass},{discarded},{err},{lip}",
            r.max_curvature,
            r.curve.length()
        );
    }
    let mut o = Outcome::default();
    o.kv("k0", k0.k0);
    o.kv("k0_a", k0.a);
    o.kv("k0_b", k0.b);
    o.kv("k0_steps", k0.n2);
    o.kv("curves", c.curves);
    o.kv("steps", c.steps);
    o.kv("max_curvature", worst_k);
    o.kv("curvature_within_k0", worst_k <= k0.k0);
    o.kv("max_mass_error", worst_mass);
    o.kv("max_fitted_lipschitz", worst_lip);
    o.file("evolve.csv", table);
    o.file("curve.csv", runs[0].curve.to_csv());
    o.finding = worst_k > k0.k0;
    Ok(o)
}

/// Certificate at the harness grid and the fitted constants; a failed certificate is
/// a violated hypothesis.
fn harness_inputs(v: &Validated) -> Result<(CertReport, HarnessFit)> {
    let h = &v.config.harness;
    let cert = certify(v.law.maps(), &v.cones, h.cert_grid)?;
    if !cert.all_passed() {
        return Err(LabError::HypothesisViolated(format!(
            "cone conditions fail: {:?}",
            cert.passed
        )));
    }
    let fit = fit_harness_constants(
        &v.law,
        &v.cones,
        &cert,
        &h.fit_settings(),
        derive_seed(v.config.seed, 10),
    )?;
    Ok((cert, fit))
}

fn family(v: &Validated, seed: u64) -> Result<CurveFamily> {
    let h = &v.config.harness;
    CurveFamily::random(
        &v.cones,
        h.family_curves,
        (h.family_lengths[0], h.family_lengths[1]),
        h.family_lip,
        seed,
    )
}

fn cmd_key_estimate(v: &Validated) -> Result<Outcome> {
    let k = &v.config.key_estimate;
    let seed = v.config.seed;
    let (_, fit) = harness_inputs(v)?;
    let consts = &fit.constants;
    let opts = v.config.harness.norm_options();
    let (rho, rho_prime) = default_key_scales(consts, k.n);
    let mut table = String::from(KEY_CSV_HEADER);
    table.push('\n');
    let (mut passed, mut worst) = (0usize, 0.0f64);
    for f in 0..k.families {
        let fam = family(v, derive_seed(seed, 1000 + f as u64))?;
        let word = sample_word(&v.law, k.n, derive_seed(seed, 2000 + f as u64)).indices;
        let r = key_estimate_check(&v.law, consts, &fam, &word, k.n, rho, rho_prime, &opts)?;
        passed += usize::from(r.pass);
        worst = worst.max(r.ratio);
        let _ = writeln!(
            table,
            "{f},{},{},{},{},{},{},{}",
            r.n, r.rho, r.rho_rhs, r.lhs, r.rhs, r.ratio, r.pass
        );
    }
    let mut o = Outcome::default();
    o.kv_block(&fit.to_kv());
    o.kv("n", k.n);
    o.kv("rho", rho);
    o.kv("rho_prime", rho_prime);
    o.kv("families", k.families);
    o.kv("passed", passed);
    o.kv("worst_ratio", worst);
    o.file("key_estimate.csv", table);
    o.finding = passed < k.families;
    Ok(o)
}

fn cmd_lasota_yorke(v: &Validated) -> Result<Outcome> {
    let l = &v.config.lasota_yorke;
    let seed = v.config.seed;
    let (_, fit) = harness_inputs(v)?;
    let fam = family(v, derive_seed(seed, 3000))?;
    let ly = lasota_yorke_check(
        &v.law,
        &fit.constants,
        &fam,
        &l.ns,
        l.words,
        &v.config.harness.norm_options(),
        derive_seed(seed, 3001),
    )?;
    let mut table = String::from(LY_CSV_HEADER);
    table.push('\n');
    for r in &ly.rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{}",
            r.n, r.rho, r.lhs, r.rhs, r.pass, r.diagonal, r.crossing, r.initial
        );
    }
    let all_pass = ly.rows.iter().all(|r| r.pass);
    let mut o = Outcome::default();
    o.kv_block(&fit.to_kv());
    o.kv("lambda_hat", ly.lambda_hat);
    o.kv("c_fit", ly.c_fit);
    o.kv("mass", ly.mass);
    o.kv("rows_pass", all_pass);
    o.file("lasota_yorke.csv", table);
    o.finding = !(ly.lambda_hat < 1.0) || !all_pass;
    if let Some(c) = &l.cesaro {
        let rows = cesaro_norm_bound(
            &v.law,
            &fam,
            c.n_max,
            c.rho,
            c.atoms_per_curve,
            c.words_per_atom,
            c.grid_n,
            derive_seed(seed, 3002),
        )?;
        let mut t = String::from(CESARO_CSV_HEADER);
        t.push('\n');
        for (m, val) in &rows {
            let _ = writeln!(t, "{m},{val}");
        }
        let tail: Vec<f64> = rows.iter().rev().take(3).map(|r| r.1).collect();
        let (lo, hi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        o.kv("cesaro_last", rows.last().map_or(0.0, |r| r.1));
        o.kv("cesaro_tail_spread", hi / lo - 1.0);
        o.kv("cesaro_reference", (PI * fam.mass()).powi(2));
        o.file("cesaro.csv", t);
    }
    Ok(o)
}

fn cmd_holder(v: &Validated) -> Result<Outcome> {
    let h = &v.config.holder;
    let seed = v.config.seed;
    let radii = default_radii(h.levels);
    let mut table = String::from(HOLDER_CSV_HEADER);
    table.push('\n');
    let mut profile_csv = String::from(HOLDER_PROFILE_CSV_HEADER);
    profile_csv.push('\n');
    let mut o = Outcome::default();
    let mut alphas = Vec::new();
    let mut any_degenerate = false;
    for &n in &h.ns {
        let fiber = push_fiber(
            &v.law,
            &v.cones,
            &bisector_seed(&v.cones),
            n,
            h.words,
            torus_point(h.point),
            derive_seed(seed, n as u64),
        )?;
        let p = holder_profile(&fiber, &radii)?;
        let floor = p.floor_radius.map_or(String::new(), |r| r.to_string());
        let _ =
            writeln!(table, "{n},{},{},{},{floor},{}", p.alpha, p.c5, p.fitted_rows, p.degenerate);
        for (r, m) in &p.rows {
            let _ = writeln!(profile_csv, "{n},{r},{m}");
        }
        o.kv(format!("alpha_n{n}"), p.alpha);
        o.kv(format!("degenerate_n{n}"), p.degenerate);
        any_degenerate |= p.degenerate;
        alphas.push(p.alpha);
    }
    let (lo, hi) =
        alphas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    o.kv("alpha_relative_spread", if lo > 0.0 { (hi - lo) / lo } else { f64::INFINITY });
    o.kv("degenerate", any_degenerate);
    o.file("holder.csv", table);
    o.file("holder_profile.csv", profile_csv);
    o.finding = any_degenerate;
    Ok(o)
}

fn cmd_transversality(v: &Validated) -> Result<Outcome> {
    let t = &v.config.transversality;
    let h = &v.config.harness;
    let seed = v.config.seed;
    let cert = certify(v.law.maps(), &v.cones, h.cert_grid)?;
    if !cert.all_passed() {
        return Err(LabError::HypothesisViolated(format!(
            "cone conditions fail: {:?}",
            cert.passed
        )));
    }
    let holder = fit_unstable_holder(
        &v.law,
        &v.cones,
        &cert,
        h.holder_pairs,
        h.holder_n_trunc,
        derive_seed(seed, 2),
    )?;
    let consts = TransversalityConstants::new(&cert, &holder);
    let p = torus_point(t.point);
    let records =
        t.ns.iter()
            .map(|&n| {
                nontransverse_mass_averaged(
                    &v.law,
                    &v.cones,
                    &consts,
                    p,
                    n,
                    t.delta,
                    t.references,
                    t.trials,
                    derive_seed(seed, 100 + n as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
    let mut table = String::from(TRANSVERSALITY_CSV_HEADER);
    table.push('\n');
    for r in &records {
        table.push_str(&r.csv_line());
        table.push('\n');
    }
    let mut o = Outcome::default();
    o.kv("c10", consts.c10);
    o.kv("lambda", consts.lambda);
    o.kv("l0", holder.l0);
    o.kv("theta", holder.theta);
    match geometric_decay_fit(&records) {
        Some((rate, r2)) => {
            o.kv("decay_rate", rate);
            o.kv("r2", r2);
            o.finding = !(rate < 1.0);
        }
        None => {
            o.kv("decay_rate", "none");
            o.finding = true;
        }
    }
    o.file("transversality.csv", table);
    Ok(o)
}

fn cmd_expansion(v: &Validated) -> Result<Outcome> {
    let e = &v.config.expansion;
    let (found, margins) = smallest_expanding_n(&v.law, e.max_n, e.space_grid, e.dir_grid)?;
    let mut table = String::from(EXPANSION_CSV_HEADER);
    table.push('\n');
    for (k, m) in margins.iter().enumerate() {
        let _ = writeln!(table, "{},{m}", k + 1);
    }
    let show = |n: Option<usize>| n.map_or("none".to_string(), |n| n.to_string());
    let mut o = Outcome::default();
    o.kv("smallest_n", show(found));
    o.finding = found.is_none();
    if e.check_doubling {
        let (again, _) = smallest_expanding_n(&v.law, e.max_n, 2 * e.space_grid, 2 * e.dir_grid)?;
        o.kv("doubled_smallest_n", show(again));
        o.kv("stable_under_doubling", again == found);
        o.finding |= again != found;
    }
    o.file("expansion.csv", table);
    Ok(o)
}

fn cmd_equidistribute(v: &Validated) -> Result<Outcome> {
    let q = &v.config.equidistribute;
    let seed = v.config.seed;
    let reference = stationary_of(&v.law, &q.reference, q.reference.grid_n, derive_seed(seed, 0))?;
    let starts: Vec<[f64; 2]> = if q.starts.is_empty() {
        (0..q.random_starts)
            .map(|k| {
                let mut rng = task_rng(derive_seed(seed, 1), k as u64);
                [rng.gen(), rng.gen()]
            })
            .collect()
    } else {
        q.starts.clone()
    };
    let mut table = String::from(EQUIDIST_RUNS_CSV_HEADER);
    table.push('\n');
    let mut decayed = 0usize;
    for (k, s) in starts.iter().enumerate() {
        let run = equidistribution_run(
            &v.law,
            torus_point(*s),
            &q.checkpoints,
            q.words,
            q.resolution,
            &reference,
            derive_seed(seed, 10 + k as u64),
        )?;
        for (n, d) in run.checkpoints.iter().zip(&run.distances) {
            let _ = writeln!(table, "{k},{},{},{n},{d}", run.x0.x, run.x0.y);
        }
        let (first, last) = (run.distances[0], run.distances[run.distances.len() - 1]);
        decayed += usize::from(last < first / 2.0);
    }
    let floor = min_cell_mass(&reference, q.resolution)?;
    let mut o = Outcome::default();
    o.kv("starts", starts.len());
    o.kv("halved_starts", decayed);
    o.kv("reference_min_cell_mass", floor);
    o.kv("full_support", floor > 0.0);
    o.file("equidistribution.csv", table);
    o.file("reference.csv", grid_csv(&reference));
    o.finding = floor <= 0.0 || (q.checkpoints.len() > 1 && decayed < starts.len());
    Ok(o)
}

fn cmd_periodic(v: &Validated) -> Result<Outcome> {
    let p = &v.config.periodic;
    let maps = v.law.maps();
    let report = common_periodic_points(&maps[p.f], &maps[p.g_index(maps.len())], p.period_max)?;
    let mut o = Outcome::default();
    for r in &report.rows {
        o.kv(format!("count_f_n{}", r.n), r.count_f);
        o.kv(format!("count_g_n{}", r.n), r.count_g);
        o.kv(format!("common_n{}", r.n), r.common.len());
    }
    o.kv("dropped_candidates", report.dropped.len());
    o.file("periodic.csv", report.to_csv());
    Ok(o)
}
