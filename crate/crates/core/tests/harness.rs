use proptest::prelude::*;
use torus_lab::cone::{certify, CertReport, ConeSystem};
use torus_lab::curve::*;
use torus_lab::harness::*;
use torus_lab::measure::*;
use torus_lab::projective::{HolderFit, TransversalityConstants};
use torus_lab::random_system::{sample_word, GeneratorLaw};
use torus_lab::torus::*;
use torus_lab::LabError;

fn perturbed_law() -> GeneratorLaw {
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
    GeneratorLaw::new(vec![fa, fb], vec![0.4, 0.6]).unwrap()
}

fn linear_law() -> GeneratorLaw {
    GeneratorLaw::uniform(vec![
        TorusMap::linear(MATRIX_A).unwrap(),
        TorusMap::linear(MATRIX_B).unwrap(),
    ])
    .unwrap()
}

fn constants(law: &GeneratorLaw, epsilon: f64) -> (CertReport, HarnessConstants) {
    let cs = ConeSystem::standard();
    let cert = certify(law.maps(), &cs, 64).unwrap();
    let c3p = fit_c3_prime(law, &cs, 10, 500, 1);
    let trans =
        TransversalityConstants::new(&cert, &HolderFit { l0: 0.0, theta: 1.0, resolved_pairs: 0 });
    let c = HarnessConstants::derive(&cert, 1.0, c3p, &trans, epsilon);
    (cert, c)
}

fn cloud(curve: &CurveJet, per_interval: usize) -> PointCloudMeasure {
    PointCloudMeasure::new(
        curve.atoms(per_interval).iter().map(|a| (TorusPoint::from_vec(a.pos), a.weight)).collect(),
    )
    .unwrap()
}

fn single(curve: CurveJet) -> CurveFamily {
    CurveFamily::new(vec![curve], vec![1.0]).unwrap()
}

#[test]
fn crossing_formula_matches_lens_sums() {
    let rho = 0.01;
    let center = Vec2::new(0.5, 0.5);
    for theta in [0.5f64, 1.2, std::f64::consts::FRAC_PI_2] {
        let (l1, l2) = (0.3, 0.2);
        let u1 = Vec2::new(1.0, 0.0);
        let u2 = Vec2::new(theta.cos(), theta.sin());
        let c1 = CurveJet::segment(
            TorusPoint::from_vec(center - u1 * (l1 / 2.0)),
            u1,
            l1,
            DEFAULT_SPACING,
        )
        .unwrap();
        let c2 = CurveJet::segment(
            TorusPoint::from_vec(center - u2 * (l2 / 2.0)),
            u2,
            l2,
            DEFAULT_SPACING,
        )
        .unwrap();
        let direct = rho_inner_lebesgue_exact(&cloud(&c1, 4), &cloud(&c2, 4), rho).unwrap();
        let formula = crossing_term(1.0 / l1, 1.0 / l2, theta);
        assert!((direct / formula - 1.0).abs() < 0.02, "theta={theta}: {direct} vs {formula}");
    }
}

#[test]
fn self_term_matches_lens_sums() {
    let rho = 2e-3;
    let seg = CurveJet::segment_with_density(
        TorusPoint::new(0.2, 0.3),
        Vec2::new(1.0, 0.4),
        0.3,
        DEFAULT_SPACING,
        |s| 2.0 * s,
        2.0,
    )
    .unwrap();
    let direct = rho_norm_lebesgue_exact(&cloud(&seg, 4), rho).unwrap().powi(2);
    let closed = curve_self_term(&seg, rho, 4);
    assert!((direct / closed - 1.0).abs() < 0.02, "{direct} vs {closed}");
}

#[test]
fn pushed_norm_matches_lens_sums_on_the_pushed_curve() {
    let law = perturbed_law();
    let cs = ConeSystem::standard();
    let rho = 2e-3;
    for seed in 0..3 {
        let seg = CurveJet::segment(
            TorusPoint::new(0.1 + 0.3 * seed as f64, 0.4),
            cs.unstable.bisector(),
            0.02,
            DEFAULT_SPACING,
        )
        .unwrap();
        let word = sample_word(&law, 2, seed).indices;
        let pushed = push_curve(&law, &cs, &seg, &word, PushOptions::default()).unwrap();
        let direct = rho_norm_lebesgue_exact(&cloud(&pushed, 4), rho).unwrap().powi(2);
        let parts =
            pushed_norm_sq(&law, &single(seg), &word, rho, &NormOptions::default()).unwrap();
        assert!(
            (parts.total() / direct - 1.0).abs() < 0.02,
            "seed {seed}: {} vs {direct}",
            parts.total()
        );
    }
}

#[test]
fn key_estimate_at_zero_steps_is_a_scale_change() {
    let law = perturbed_law();
    let (_, c) = constants(&law, 0.01);
    let cs = ConeSystem::standard();
    let fam = single(
        CurveJet::segment(TorusPoint::new(0.3, 0.3), cs.unstable.bisector(), 0.2, DEFAULT_SPACING)
            .unwrap(),
    );
    let opts = NormOptions::default();
    let rho_prime = c.rho0 / 2.0;
    let rho = rho_prime / 2.0;
    let o = key_estimate_check(&law, &c, &fam, &[], 0, rho, rho_prime, &opts).unwrap();
    assert_eq!(o.lhs_parts, pushed_norm_sq(&law, &fam, &[], rho, &opts).unwrap());
    assert_eq!(o.rhs_parts, pushed_norm_sq(&law, &fam, &[], c.c9 * rho, &opts).unwrap());
    assert_eq!(o.rho_rhs, c.c9 * rho);
    assert_eq!(o.lhs_parts.cross_term, o.rhs_parts.cross_term);
    assert!((o.lhs_parts.self_term / o.rhs_parts.self_term - c.c9).abs() < 1e-12);
    assert_eq!(o.rhs, o.rhs_parts.total());
}

#[test]
fn straight_segment_under_linear_words() {
    let law = linear_law();
    let (cert, c) = constants(&law, 0.01);
    let cs = ConeSystem::standard();
    let fam = single(
        CurveJet::segment(TorusPoint::new(0.3, 0.3), cs.unstable.bisector(), 0.2, DEFAULT_SPACING)
            .unwrap(),
    );
    let n = 6;
    let word = sample_word(&law, n, 3).indices;
    let (rho, rp) = default_key_scales(&c, n);
    let o = key_estimate_check(&law, &c, &fam, &word, n, rho, rp, &NormOptions::default()).unwrap();
    assert!(o.pass && o.ratio <= (6.0 * c.epsilon * n as f64).exp());
    // Closed form of the self parts: the stretch is at least lambda_{u,-}^n everywhere.
    let bound = c.c9 * cert.lambda_s_plus.powi(-(n as i32)) / cert.lambda_u_minus.powi(n as i32);
    assert!(o.lhs_parts.self_term / o.rhs_parts.self_term <= bound * (1.0 + 1e-9));
}

#[test]
fn key_estimate_reports_violated_hypotheses() {
    let law = linear_law();
    let (_, c) = constants(&law, 0.01);
    let cs = ConeSystem::standard();
    let opts = NormOptions::default();
    let fam = single(
        CurveJet::segment(TorusPoint::new(0.3, 0.3), cs.unstable.bisector(), 0.2, DEFAULT_SPACING)
            .unwrap(),
    );
    let w = vec![0, 1, 0];
    let (rho, rp) = default_key_scales(&c, 3);
    let hyp =
        |r: Result<KeyEstimateOutcome, LabError>| matches!(r, Err(LabError::HypothesisViolated(_)));
    assert!(hyp(key_estimate_check(&law, &c, &fam, &w, 3, rho, c.rho0, &opts)));
    assert!(hyp(key_estimate_check(&law, &c, &fam, &w, 3, rp, rp, &opts)));
    let short = single(
        CurveJet::segment(TorusPoint::new(0.3, 0.3), cs.unstable.bisector(), rho, DEFAULT_SPACING)
            .unwrap(),
    );
    assert!(hyp(key_estimate_check(&law, &c, &short, &w, 3, rho, rp, &opts)));
    assert!(matches!(
        key_estimate_check(&law, &c, &fam, &w, 4, rho, rp, &opts),
        Err(LabError::InvalidArgument(_))
    ));
    let tiny = single(
        CurveJet::segment(TorusPoint::new(0.3, 0.3), cs.unstable.bisector(), c.rho1 / 2.0, 1e-5)
            .unwrap(),
    );
    assert!(matches!(
        lasota_yorke_check(&law, &c, &tiny, &[2], 4, &opts, 1),
        Err(LabError::HypothesisViolated(_))
    ));
}

#[test]
fn lasota_yorke_is_bilinear_in_the_family() {
    let law = perturbed_law();
    let (_, c) = constants(&law, 0.01);
    let cs = ConeSystem::standard();
    let fam = CurveFamily::random(&cs, 2, (0.1, 0.2), 1.0, 5).unwrap();
    let opts = NormOptions { cross_atoms: 64, ..NormOptions::default() };
    let a = lasota_yorke_check(&law, &c, &fam, &[2, 3], 6, &opts, 9).unwrap();
    let k = 3.5;
    let b = lasota_yorke_check(&law, &c, &fam.scaled(k), &[2, 3], 6, &opts, 9).unwrap();
    assert!((b.mass / a.mass - k).abs() < 1e-12);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert!((rb.lhs / ra.lhs - k * k).abs() < 1e-9);
        assert!((rb.initial / ra.initial - k * k).abs() < 1e-9);
    }
    assert!((b.lambda_hat - a.lambda_hat).abs() < 1e-9 * a.lambda_hat.max(1.0));
    assert!((b.c_fit - a.c_fit).abs() < 1e-9 * a.c_fit.max(1.0));
    assert!(a.rows.iter().all(|r| r.pass));
    let csv = a.to_csv();
    assert!(csv.starts_with(HARNESS_CSV_HEADER));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn cesaro_first_checkpoint_is_the_initial_norm() {
    let law = linear_law();
    let cs = ConeSystem::standard();
    let fam = CurveFamily::random(&cs, 2, (0.2, 0.3), 0.0, 3).unwrap();
    let rho = 1.0 / 16.0;
    let grid = 256;
    let atoms = 256;
    let rows = cesaro_norm_bound(&law, &fam, 8, rho, atoms, 4, grid, 1).unwrap();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 4, 8]);
    // Independent route: fine atoms of the same curves, binned on the same grid.
    let pts: Vec<(TorusPoint, f64)> = fam
        .curves
        .iter()
        .zip(&fam.weights)
        .flat_map(|(c, w)| {
            c.atoms(1).into_iter().map(move |a| (TorusPoint::from_vec(a.pos), w * a.weight))
        })
        .collect();
    let g = PointCloudMeasure::new(pts).unwrap().to_grid(grid).unwrap();
    let direct = rho_norm(&g, rho, &SmoothReference::Lebesgue, grid).unwrap().powi(2);
    assert!((rows[0].1 / direct - 1.0).abs() < 0.02, "{} vs {direct}", rows[0].1);
    assert_eq!(rows, cesaro_norm_bound(&law, &fam, 8, rho, atoms, 4, grid, 1).unwrap());
}

#[test]
fn families_validate_their_input() {
    let cs = ConeSystem::standard();
    let seg =
        CurveJet::segment(TorusPoint::new(0.3, 0.3), cs.unstable.bisector(), 0.2, DEFAULT_SPACING)
            .unwrap();
    assert!(CurveFamily::new(vec![seg.clone()], vec![]).is_err());
    assert!(CurveFamily::new(vec![seg], vec![-1.0]).is_err());
    assert!(CurveFamily::random(&cs, 0, (0.1, 0.2), 1.0, 1).is_err());
    let f = CurveFamily::random(&cs, 5, (0.1, 0.2), 1.0, 1).unwrap();
    assert!((f.mass() - 1.0).abs() < 1e-12);
    assert!(f.min_length() >= 0.1 - 1e-12);
    assert!((f.scaled(2.0).mass() - 2.0).abs() < 1e-12);
    for c in &f.curves {
        c.check_admissible(&cs, 1.0).unwrap();
    }
}

#[test]
fn derived_constants_are_consistent() {
    let law = perturbed_law();
    let (cert, c) = constants(&law, 0.01);
    assert!(c.c3_prime >= 1.0);
    assert!((c.c3 - c.c3_prime * cert.c0pp).abs() < 1e-12);
    assert!((c.c9 - 2.0 * c.c3_prime / cert.c0pp).abs() < 1e-12);
    assert!((c.rho1 - c.rho0 / 4.0).abs() < 1e-15);
    assert!(c.rho0 > 0.0 && c.rho0 <= 0.005);
    assert!(c.ly_window(10) < c.ly_window(5));
    assert_eq!(fit_c3_prime(&law, &ConeSystem::standard(), 10, 500, 1), c.c3_prime);
    assert!(c.to_kv().contains("c9="));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn crossing_term_is_symmetric_and_bilinear(z1 in 0.1f64..10.0, z2 in 0.1f64..10.0, a in 0.1f64..3.0, k in 0.1f64..10.0) {
        prop_assert!((crossing_term(z1, z2, a) - crossing_term(z2, z1, a)).abs() < 1e-12 * crossing_term(z1, z2, a));
        prop_assert!((crossing_term(k * z1, z2, a) / crossing_term(z1, z2, a) - k).abs() < 1e-12);
        prop_assert!((crossing_term(z1, z2, a) - crossing_term(z1, z2, std::f64::consts::PI - a)).abs() < 1e-9 * crossing_term(z1, z2, a));
    }

    #[test]
    fn pushed_norm_scales_quadratically(seed in 0u64..1000, k in 0.1f64..10.0) {
        let law = perturbed_law();
        let cs = ConeSystem::standard();
        let fam = CurveFamily::random(&cs, 2, (0.05, 0.1), 1.0, seed).unwrap();
        let word = sample_word(&law, 3, seed).indices;
        let opts = NormOptions { cross_atoms: 64, ..NormOptions::default() };
        let a = pushed_norm_sq(&law, &fam, &word, 1e-3, &opts).unwrap();
        let b = pushed_norm_sq(&law, &fam.scaled(k), &word, 1e-3, &opts).unwrap();
        prop_assert!((b.total() / a.total() - k * k).abs() < 1e-9);
    }
}
