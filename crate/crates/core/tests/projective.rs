use std::f64::consts::PI;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use torus_lab::cone::{certify, CertReport, ConeSystem};
use torus_lab::projective::*;
use torus_lab::random_system::GeneratorLaw;
use torus_lab::torus::*;

fn lin(m: [[i64; 2]; 2]) -> TorusMap {
    TorusMap::linear(m).unwrap()
}

fn ab() -> GeneratorLaw {
    GeneratorLaw::uniform(vec![lin(MATRIX_A), lin(MATRIX_B)]).unwrap()
}

fn ab_cert() -> CertReport {
    certify(ab().maps(), &ConeSystem::standard(), 64).unwrap()
}

fn ab_constants() -> TransversalityConstants {
    let cert = ab_cert();
    let h = fit_unstable_holder(&ab(), &ConeSystem::standard(), &cert, 50, 20, 1).unwrap();
    TransversalityConstants::new(&cert, &h)
}

const SLOPE_A: f64 = 0.618_033_988_749_894_8;

#[test]
fn proj_dist_wraps_at_pi() {
    assert_eq!(proj_dist(0.0, 0.0), 0.0);
    assert!((proj_dist(0.1, PI - 0.1) - 0.2).abs() < 1e-15);
    assert!((proj_dist(0.0, PI / 2.0) - PI / 2.0).abs() < 1e-15);
    assert!(proj_dist(0.3, 0.3 + PI) < 1e-15);
}

#[test]
fn uniform_atoms_have_slope_one() {
    let k = 20_000;
    let atoms = (0..k).map(|i| (PI * (i as f64 + 0.5) / k as f64, 1.0 / k as f64)).collect();
    let f = FiberMeasure::new(TorusPoint::new(0.0, 0.0), atoms, k).unwrap();
    let p = holder_profile(&f, &default_radii(8)).unwrap();
    for &(r, m) in &p.rows {
        if r < PI / 2.0 {
            assert!((m - 2.0 * r / PI).abs() <= 2.0 / k as f64, "r={r}: {m}");
        }
    }
    assert!((p.alpha - 1.0).abs() < 0.01, "alpha {}", p.alpha);
    assert!(!p.degenerate);
}

#[test]
fn single_atom_is_flagged_degenerate() {
    let f = FiberMeasure::dirac(TorusPoint::new(0.5, 0.5), 0.4);
    let p = holder_profile(&f, &default_radii(10)).unwrap();
    assert!(p.rows.iter().all(|&(_, m)| (m - 1.0).abs() < 1e-15));
    assert_eq!(p.alpha, 0.0);
    assert!(p.degenerate);
}

#[test]
fn zero_steps_return_the_seed() {
    let cs = ConeSystem::standard();
    let seed = vec![(0.2, 0.25), (0.5, 0.75)];
    let x = TorusPoint::new(0.1, 0.9);
    let f = push_fiber(&ab(), &cs, &seed, 0, 100, x, 1).unwrap();
    assert_eq!(f.atoms, seed);
    assert_eq!(f.base, x);
    assert!(push_fiber(&ab(), &cs, &[(2.0, 1.0)], 3, 10, x, 1).is_err());
}

#[test]
fn single_map_fiber_collapses_to_the_eigenline() {
    let cs = ConeSystem::standard();
    let cert = ab_cert();
    let law = GeneratorLaw::uniform(vec![lin(MATRIX_A)]).unwrap();
    let n = 12;
    let f =
        push_fiber(&law, &cs, &bisector_seed(&cs), n, 64, TorusPoint::new(0.3, 0.3), 2).unwrap();
    let bound = cert.direction_error(n);
    for &(a, _) in &f.atoms {
        assert!(proj_dist(a, SLOPE_A.atan()) <= bound, "{a}");
    }
    let p = holder_profile(&f, &default_radii(20)).unwrap();
    assert!(p.degenerate);
}

#[test]
fn fiber_atoms_are_trapped_and_mass_is_conserved() {
    let cs = ConeSystem::standard();
    let seed = vec![(cs.unstable.from + 0.01, 0.3), (cs.unstable.bisector_angle(), 0.7)];
    let f = push_fiber(&ab(), &cs, &seed, 8, 2_000, TorusPoint::new(0.7, 0.2), 3).unwrap();
    assert!((f.mass() - 1.0).abs() < 1e-12);
    assert!(f.atoms.iter().all(|&(a, _)| cs.unstable.contains_angle(a)));
    assert_eq!(f.atoms.len(), 4_000);
}

#[test]
fn deterministic_pushes_are_equivariant() {
    let cs = ConeSystem::standard();
    let f = TorusMap::new(
        MATRIX_A,
        vec![FourierMode { k: [0, 1], amp: [0.04, 0.06], phase: 0.7 }],
        0.05,
    )
    .unwrap();
    let law = GeneratorLaw::uniform(vec![f.clone()]).unwrap();
    let x = TorusPoint::new(0.45, 0.15);
    let y = f.inverse(x).unwrap();
    let seed = bisector_seed(&cs);
    for n in [1, 4, 9] {
        let before = push_fiber(&law, &cs, &seed, n, 1, y, 0).unwrap();
        let after = push_fiber(&law, &cs, &seed, n + 1, 1, x, 0).unwrap();
        let m = f.differential(y);
        let moved = line_angle(m * unit_from_angle(before.atoms[0].0));
        assert!(proj_dist(moved, after.atoms[0].0) < 1e-12, "n={n}");
        assert_eq!(before.atoms[0].1, after.atoms[0].1);
    }
}

#[test]
fn profile_is_monotone_and_permutation_invariant() {
    let cs = ConeSystem::standard();
    let f = push_fiber(&ab(), &cs, &bisector_seed(&cs), 10, 5_000, TorusPoint::new(0.3, 0.7), 4)
        .unwrap();
    let radii = default_radii(20);
    let p = holder_profile(&f, &radii).unwrap();
    let mut sorted = p.rows.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(sorted.windows(2).all(|w| w[1].1 >= w[0].1));
    let mut g = f.clone();
    g.atoms.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let q = holder_profile(&g, &radii).unwrap();
    assert_eq!(p.rows, q.rows);
    assert_eq!(p.alpha, q.alpha);
    assert!(p.alpha > 0.0);
    assert!(p.floor_mass > 0.0 && p.floor_radius.is_some());
    let eta = eta_from_profile(&p, 10).unwrap();
    assert!(eta > 0.0 && eta < 1.0);
}

#[test]
fn linear_laws_have_a_constant_unstable_field() {
    let cs = ConeSystem::standard();
    let h = fit_unstable_holder(&ab(), &cs, &ab_cert(), 100, 20, 5).unwrap();
    assert_eq!(h.l0, 0.0);
    assert_eq!(h.theta, 1.0);
    let c = ab_constants();
    assert_eq!(c.c10, 2.0 * ab_cert().c4);
}

#[test]
fn perturbed_unstable_field_is_holder() {
    let cs = ConeSystem::standard();
    let fa = TorusMap::new(
        MATRIX_A,
        vec![FourierMode { k: [0, 1], amp: [0.04, 0.06], phase: 0.7 }],
        0.05,
    )
    .unwrap();
    let fb = TorusMap::new(
        MATRIX_B,
        vec![FourierMode { k: [1, 0], amp: [0.05, 0.03], phase: 0.2 }],
        0.05,
    )
    .unwrap();
    let law = GeneratorLaw::new(vec![fa, fb], vec![0.4, 0.6]).unwrap();
    let cert = certify(law.maps(), &cs, 64).unwrap();
    let h = fit_unstable_holder(&law, &cs, &cert, 400, 30, 6).unwrap();
    assert!(h.l0 > 0.0 && h.theta > 0.5 && h.theta <= 1.0, "{h:?}");
    assert!(h.resolved_pairs > 300);
}

#[test]
fn transversality_trivial_cases() {
    let cs = ConeSystem::standard();
    let law = ab();
    let c = ab_constants();
    let p = TorusPoint::new(0.2, 0.4);
    let w = vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1, 0, 0];
    assert!(transversality_test(&law, &cs, &c, p, 20, 0.0, &w, &w).unwrap());
    assert!(c.threshold(1, 0.0) >= PI / 2.0);
    assert!(transversality_test(&law, &cs, &c, p, 1, 0.0, &[0], &[1]).unwrap());
    assert!(transversality_test(&law, &cs, &c, p, 2, 0.0, &[0], &[1]).is_err());
}

#[test]
fn constant_words_of_a_and_b_are_transverse() {
    let cs = ConeSystem::standard();
    let c = ab_constants();
    let p = TorusPoint::new(0.2, 0.4);
    let n = 20;
    assert!(c.threshold(n, 0.0) < 0.01);
    assert!(!transversality_test(&ab(), &cs, &c, p, n, 0.0, &[0; 20], &[1; 20]).unwrap());
    let limit = (SLOPE_A.atan() - ((21f64.sqrt() - 1.0) / 10.0).atan()).abs();
    let gap = cone_image_gap(&ab(), &cs, p, &[0; 20], &[1; 20]).unwrap();
    assert!((gap - limit).abs() < 1e-6, "{gap} vs {limit}");
}

#[test]
fn deterministic_law_never_separates() {
    let cs = ConeSystem::standard();
    let c = ab_constants();
    let law = GeneratorLaw::uniform(vec![lin(MATRIX_A)]).unwrap();
    for n in [4, 8, 12] {
        let r =
            nontransverse_mass(&law, &cs, &c, TorusPoint::new(0.5, 0.1), n, 0.0, 1_000, 7).unwrap();
        assert_eq!(r.nontransverse_fraction, 1.0);
    }
}

#[test]
fn vacuous_threshold_gives_full_mass() {
    let cs = ConeSystem::standard();
    let c = ab_constants();
    let r =
        nontransverse_mass(&ab(), &cs, &c, TorusPoint::new(0.5, 0.1), 10, 10.0, 1_000, 7).unwrap();
    assert_eq!(r.nontransverse_fraction, 1.0);
    assert!(r.threshold >= PI / 2.0);
    assert_eq!(r.pairs_tested, 1_000);
}

#[test]
fn two_map_law_separates_words() {
    let cs = ConeSystem::standard();
    let c = ab_constants();
    let p = TorusPoint::new(0.5, 0.1);
    let early = nontransverse_mass_averaged(&ab(), &cs, &c, p, 4, 0.0, 10, 1_000, 8).unwrap();
    let late = nontransverse_mass_averaged(&ab(), &cs, &c, p, 12, 0.0, 10, 1_000, 8).unwrap();
    assert!(late.nontransverse_fraction < early.nontransverse_fraction);
    assert!(late.nontransverse_fraction > 0.0);
    assert_eq!(late.pairs_tested, 10_000);
    let recs = [early, late];
    let (rate, r2) = geometric_decay_fit(&recs).unwrap();
    assert!(rate < 1.0 && (r2 - 1.0).abs() < 1e-12);
}

#[test]
fn decay_fit_needs_positive_masses() {
    let r = |n, m| TransversalityRecord {
        p: TorusPoint::new(0.0, 0.0),
        n,
        delta: 0.0,
        threshold: 0.1,
        pairs_tested: 10,
        nontransverse_fraction: m,
    };
    assert!(geometric_decay_fit(&[r(1, 0.5), r(2, 0.0)]).is_none());
    let (rate, r2) = geometric_decay_fit(&[r(1, 0.5), r(2, 0.25), r(3, 0.125)]).unwrap();
    assert!((rate - 0.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
}

#[test]
fn epsilon_budget_vanishes_without_regularity() {
    let cert = ab_cert();
    assert_eq!(epsilon_budget(&cert, 0.0, 0.5, 1.0), 0.0);
    let e = epsilon_budget(&cert, 0.2, 0.1, 1.0);
    assert!(e > 0.0 && e <= 0.2 * 10f64.ln() / 8.0 + 1e-15);
}

#[test]
fn csv_layouts() {
    let f = FiberMeasure::new(TorusPoint::new(0.0, 0.0), vec![(0.1, 0.5), (0.2, 0.5)], 2).unwrap();
    let csv = f.to_csv();
    assert!(csv.starts_with(FIBER_CSV_HEADER));
    assert_eq!(csv.lines().count(), 3);
    let p = holder_profile(&f, &[0.05, 0.2]).unwrap();
    let csv = p.to_csv();
    assert!(csv.starts_with(PROFILE_CSV_HEADER));
    assert_eq!(csv.lines().count(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn proj_dist_is_a_metric(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0) {
        prop_assert!((proj_dist(a, b) - proj_dist(b, a)).abs() < 1e-15);
        prop_assert!(proj_dist(a, b) <= PI / 2.0 + 1e-15);
        prop_assert!(proj_dist(a, c) <= proj_dist(a, b) + proj_dist(b, c) + 1e-12);
    }

    #[test]
    fn linear_fit_recovers_lines(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
        let (fa, fb, _) = linear_fit(&xs, &ys);
        prop_assert!((fa - a).abs() < 1e-9 && (fb - b).abs() < 1e-9);
    }

    #[test]
    fn profile_ignores_atom_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms: Vec<(f64, f64)> = (0..200).map(|i| ((i as f64 * 0.37).sin().abs() * PI, 1.0 / 200.0)).collect();
        let f = FiberMeasure::new(TorusPoint::new(0.0, 0.0), atoms, 200).unwrap();
        let mut g = f.clone();
        g.atoms.shuffle(&mut rng);
        let radii = default_radii(6);
        prop_assert_eq!(holder_profile(&f, &radii).unwrap().rows, holder_profile(&g, &radii).unwrap().rows);
    }
}
