use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use torus_lab::measure::*;
use torus_lab::random_system::GeneratorLaw;
use torus_lab::torus::*;
use torus_lab::LabError;

const LEB: SmoothReference = SmoothReference::Lebesgue;

/// Random atomic measure: a uniform background plus a few clusters of random width.
pub fn random_cloud(seed: u64, atoms: usize) -> PointCloudMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = rng.gen_range(1..5);
    let centers: Vec<(f64, f64, f64)> = (0..clusters)
        .map(|_| (rng.gen(), rng.gen(), 10f64.powf(rng.gen_range(-3.0..-1.0))))
        .collect();
    let background = rng.gen_range(0.0..0.5);
    let pts = (0..atoms)
        .map(|_| {
            let p = if rng.gen::<f64>() < background {
                TorusPoint::new(rng.gen(), rng.gen())
            } else {
                let (cx, cy, s) = centers[rng.gen_range(0..clusters)];
                TorusPoint::new(
                    cx + s * (rng.gen::<f64>() - 0.5),
                    cy + s * (rng.gen::<f64>() - 0.5),
                )
            };
            (p, rng.gen_range(0.1..1.0))
        })
        .collect();
    PointCloudMeasure::new(pts).unwrap()
}

fn random_grid(seed: u64, n: usize) -> GridMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = [rng.gen_range(1..4), rng.gen_range(0..4)];
    let a: f64 = rng.gen_range(0.0..0.95);
    let sharp: f64 = rng.gen_range(1.0..6.0);
    GridMeasure::from_density(n, |p| {
        let base = 1.0 + a * (TAU * (k[0] as f64 * p.x + k[1] as f64 * p.y)).cos();
        base.powf(sharp) * (0.5 + rng_free_noise(p))
    })
    .unwrap()
}

fn rng_free_noise(p: TorusPoint) -> f64 {
    ((p.x * 7919.0).sin() * (p.y * 104729.0).cos()).abs()
}

#[test]
fn ball_mass_examples() {
    let leb = GridMeasure::lebesgue(128);
    let m = leb.ball_mass(TorusPoint::new(0.37, 0.91), 0.1).unwrap();
    assert!((m / (PI * 0.01) - 1.0).abs() < 0.02, "{m}");
    let z = TorusPoint::new(0.2, 0.7);
    assert_eq!(PointCloudMeasure::new(vec![(z, 0.7)]).unwrap().ball_mass(z, 0.01).unwrap(), 0.7);
    let two = PointCloudMeasure::new(vec![(z, 0.5), (TorusPoint::new(0.5, 0.7), 0.5)]).unwrap();
    assert_eq!(two.ball_mass(z, 0.2).unwrap(), 0.5);
    assert!(matches!(leb.ball_mass(z, 0.05), Err(LabError::ResolutionTooCoarse { .. })));
    assert!(leb.ball_mass(z, 0.3).is_err());
}

#[test]
fn ball_mass_wraps_around_the_torus() {
    let leb = GridMeasure::lebesgue(256);
    let inside = leb.ball_mass(TorusPoint::new(0.5, 0.5), 0.1).unwrap();
    let corner = leb.ball_mass(TorusPoint::new(0.0, 0.0), 0.1).unwrap();
    assert!((inside - corner).abs() < 1e-3 * inside);
    let cloud = PointCloudMeasure::new(vec![(TorusPoint::new(0.99, 0.01), 1.0)]).unwrap();
    assert_eq!(cloud.ball_mass(TorusPoint::new(0.01, 0.99), 0.05).unwrap(), 1.0);
}

#[test]
fn lebesgue_norm_is_pi() {
    let leb = GridMeasure::lebesgue(512);
    let v = rho_inner(&leb, &leb, 0.05, &LEB, 256).unwrap();
    assert!((v / (PI * PI) - 1.0).abs() < 0.01, "{v}");
    assert_eq!(rho_inner(&leb, &GridMeasure::zeros(512), 0.05, &LEB, 64).unwrap(), 0.0);
}

#[test]
fn dirac_norm() {
    let x = TorusPoint::new(0.3, 0.6);
    let d = PointCloudMeasure::dirac(x);
    let rho = 0.05;
    let v = rho_norm(&d, rho, &LEB, 1024).unwrap();
    assert!((v / (PI.sqrt() / rho) - 1.0).abs() < 0.02, "{v}");
    let e = rho_norm_lebesgue_exact(&d, rho).unwrap();
    assert!((e / (PI.sqrt() / rho) - 1.0).abs() < 1e-12);
}

#[test]
fn smooth_density_norm() {
    let g = GridMeasure::from_density(512, |p| 1.0 + 0.5 * (TAU * p.x).sin()).unwrap();
    let v = rho_norm(&g, 0.02, &LEB, 256).unwrap();
    let oracle = PI * (1.0f64 + 0.125).sqrt();
    assert!((v / oracle - 1.0).abs() < 0.01, "{v} vs {oracle}");
    let curve =
        rho_norm_curve(&GridMeasure::lebesgue(512), &[0.2, 0.1, 0.05, 0.025], &LEB, 128).unwrap();
    for (_, n) in curve {
        assert!((n / PI - 1.0).abs() < 0.01);
    }
}

#[test]
fn nonuniform_reference() {
    let m = SmoothReference::trig(vec![DensityMode { k: [1, 0], amp: 0.4, phase: 0.0 }]).unwrap();
    assert!((m.c0() - 1.0 / 0.6).abs() < 1e-12);
    assert!(SmoothReference::trig(vec![DensityMode { k: [1, 0], amp: 1.2, phase: 0.0 }]).is_err());
    // Lebesgue measure under m: nu(B) = pi rho^2 and int dm = 1
    let leb = GridMeasure::lebesgue(256);
    let v = rho_inner(&leb, &leb, 0.1, &m, 128).unwrap();
    assert!((v / (PI * PI) - 1.0).abs() < 0.01);
}

#[test]
fn lattice_and_exact_routes_agree() {
    for seed in 0..5 {
        let c = random_cloud(seed, 300);
        let c2 = random_cloud(seed + 100, 300);
        for rho in [0.1, 0.05] {
            let lat = rho_inner(&c, &c2, rho, &LEB, 1024).unwrap();
            let ex = rho_inner_lebesgue_exact(&c, &c2, rho).unwrap();
            assert!(
                (lat - ex).abs() <= 0.01 * ex.abs().max(1e-3),
                "seed {seed} rho {rho}: {lat} vs {ex}"
            );
        }
    }
}

#[test]
fn lens_area_limits() {
    assert!((lens_area(0.0, 0.1) - PI * 0.01).abs() < 1e-15);
    assert_eq!(lens_area(0.2, 0.1), 0.0);
    // numerical oracle: count lattice points in both discs
    let (d, r) = (0.07, 0.05);
    let n = 2000;
    let mut hits = 0usize;
    for a in 0..n {
        for b in 0..n {
            let x = -r + 2.0 * r * (a as f64 + 0.5) / n as f64;
            let y = -r + 2.0 * r * (b as f64 + 0.5) / n as f64;
            if x * x + y * y <= r * r && (x - d) * (x - d) + y * y <= r * r {
                hits += 1;
            }
        }
    }
    let approx = hits as f64 * (2.0 * r / n as f64).powi(2);
    assert!((approx - lens_area(d, r)).abs() < 1e-3 * lens_area(d, r));
}

#[test]
fn variable_radius_examples() {
    let g = random_grid(3, 256);
    let rho = 0.05;
    let a = variable_rho_norm(&g, |_| rho, &LEB, 128).unwrap();
    let b = rho_inner(&g, &g, rho, &LEB, 128).unwrap();
    assert_eq!(a, b);
    let leb = GridMeasure::lebesgue(512);
    let v = variable_rho_norm(&leb, |p| if p.x < 0.5 { 0.03 } else { 0.12 }, &LEB, 128).unwrap();
    assert!((v / (PI * PI) - 1.0).abs() < 0.01, "{v}");
}

#[test]
fn variable_radius_inequality_with_fitted_constant() {
    let mut c2 = 0.0f64;
    for seed in 0..100u64 {
        let g = random_grid(seed, 256);
        let rho = 1.0 / 32.0;
        let (lo, hi) = (rho * (1 + seed % 2) as f64, rho * (2 + 2 * (seed % 3)) as f64);
        let k = [1 + (seed % 3) as i32, (seed % 2) as i32];
        let lhs = variable_rho_norm(
            &g,
            |p| if (TAU * (k[0] as f64 * p.x + k[1] as f64 * p.y)).sin() > 0.0 { lo } else { hi },
            &LEB,
            64,
        )
        .unwrap();
        let rhs = rho_inner(&g, &g, rho, &LEB, 64).unwrap() * (1.0 + (hi / lo).ln());
        c2 = c2.max(lhs / rhs);
    }
    assert!(c2.is_finite() && c2 < 10.0, "fitted C2 = {c2}");
}

#[test]
fn scale_change_constant_fits_random_measures() {
    let scales: Vec<f64> = (3..=8).map(|k| 2f64.powi(-k)).collect();
    let mut c1 = 0.0f64;
    for seed in 0..100u64 {
        let c = random_cloud(seed, 200);
        let curve: Vec<(f64, f64)> =
            scales.iter().map(|&r| (r, rho_norm_lebesgue_exact(&c, r).unwrap())).collect();
        c1 = c1.max(scale_change_ratio(&curve, 16.0));
    }
    assert!(c1 <= 10.0, "fitted C1 = {c1}");
}

#[test]
fn weak_limits_have_converging_norms() {
    // atoms on a segment converge weakly to arc length on it
    let seg = |k: usize| {
        PointCloudMeasure::new(
            (0..k)
                .map(|i| {
                    (TorusPoint::new(0.2 + 0.4 * (i as f64 + 0.5) / k as f64, 0.5), 1.0 / k as f64)
                })
                .collect(),
        )
        .unwrap()
    };
    let limit = rho_norm_lebesgue_exact(&seg(40_000), 0.05).unwrap();
    let errs: Vec<f64> = [50, 200, 800]
        .iter()
        .map(|&k| (rho_norm_lebesgue_exact(&seg(k), 0.05).unwrap() - limit).abs())
        .collect();
    assert!(errs[2] < errs[0] && errs[2] < 1e-3 * limit, "{errs:?}");
}

fn lin(m: [[i64; 2]; 2]) -> TorusMap {
    TorusMap::linear(m).unwrap()
}

#[test]
fn convolution_examples() {
    let law = GeneratorLaw::uniform(vec![lin(MATRIX_A), lin(MATRIX_B)]).unwrap();
    let nu = random_cloud(1, 100);
    assert_eq!(convolve_power(&law, 0, &nu, 4, 1).unwrap(), nu);
    let out = convolve_power(&law, 5, &nu, 4, 1).unwrap();
    assert_eq!(out.len(), 400);
    assert!((out.total() - nu.total()).abs() < 1e-12);
    assert_eq!(out, convolve_power(&law, 5, &nu, 4, 1).unwrap());
    let single = GeneratorLaw::uniform(vec![lin(MATRIX_A)]).unwrap();
    let pushed = convolve_power(&single, 3, &nu, 1, 9).unwrap();
    for ((p, w), (q, v)) in nu.points().iter().zip(pushed.points()) {
        let a = lin(MATRIX_A);
        assert_eq!(a.apply(a.apply(a.apply(*p))), *q);
        assert_eq!(w, v);
    }
}

#[test]
fn conservative_stationary_measure_is_uniform() {
    let law = GeneratorLaw::uniform(vec![lin(MATRIX_A), lin(MATRIX_B)]).unwrap();
    let x0 = TorusPoint::new(0.1234, 0.5678);
    let est = estimate_stationary(&law, x0, 2100, 1000, DEFAULT_BURN_IN, 5, 64).unwrap();
    let d = coarse_distance(
        &TorusMeasure::Grid(est.clone()),
        &TorusMeasure::Grid(GridMeasure::lebesgue(64)),
        64,
    )
    .unwrap();
    assert!(d < 0.05, "{d}");
    let only_a = GeneratorLaw::uniform(vec![lin(MATRIX_A)]).unwrap();
    // a single map gives identical words, so one long orbit replaces many short ones
    let est_a = estimate_stationary(&only_a, x0, 2_000_100, 1, DEFAULT_BURN_IN, 5, 64).unwrap();
    let d = coarse_distance(
        &TorusMeasure::Grid(est_a),
        &TorusMeasure::Grid(GridMeasure::lebesgue(64)),
        64,
    )
    .unwrap();
    assert!(d < 0.05, "{d}");
    assert_eq!(est, estimate_stationary(&law, x0, 2100, 1000, DEFAULT_BURN_IN, 5, 64).unwrap());
    assert!(estimate_stationary(&law, x0, 50, 10, 100, 5, 64).is_err());
}

#[test]
fn coarse_distance_examples() {
    let u = TorusMeasure::Grid(GridMeasure::lebesgue(16));
    assert_eq!(coarse_distance(&u, &u, 8).unwrap(), 0.0);
    let a = TorusMeasure::Cloud(PointCloudMeasure::dirac(TorusPoint::new(0.1, 0.1)));
    let b = TorusMeasure::Cloud(PointCloudMeasure::dirac(TorusPoint::new(0.6, 0.6)));
    assert_eq!(coarse_distance(&a, &b, 4).unwrap(), 1.0);
    let half = GridMeasure::from_density(16, |p| if p.x < 0.5 { 1.0 } else { 0.0 }).unwrap();
    assert!((coarse_distance(&u, &TorusMeasure::Grid(half), 2).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn grid_serialization() {
    let g = GridMeasure::lebesgue(4);
    let csv = g.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("4"));
    assert_eq!(lines.count(), 16);
    assert!(g.to_pgm().starts_with("P2\n4 4\n255\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cauchy_schwarz_and_symmetry(s1 in 0u64..1000, s2 in 0u64..1000, rho in 0.03f64..0.2) {
        let a = random_cloud(s1, 60);
        let b = random_cloud(s2, 60);
        let ab = rho_inner(&a, &b, rho, &LEB, 128).unwrap();
        let ba = rho_inner(&b, &a, rho, &LEB, 128).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
        let na = rho_norm(&a, rho, &LEB, 128).unwrap();
        let nb = rho_norm(&b, rho, &LEB, 128).unwrap();
        prop_assert!(ab <= na * nb * (1.0 + 1e-9));
    }

    #[test]
    fn inner_product_is_bilinear(s1 in 0u64..1000, s2 in 0u64..1000, c in 0.1f64..5.0) {
        let a = random_cloud(s1, 40);
        let b = random_cloud(s2, 40);
        let scaled = PointCloudMeasure::new(a.points().iter().map(|&(p, w)| (p, c * w)).collect()).unwrap();
        let lhs = rho_inner_lebesgue_exact(&scaled, &b, 0.07).unwrap();
        let rhs = c * rho_inner_lebesgue_exact(&a, &b, 0.07).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-12));
    }

    #[test]
    fn tv_is_a_metric(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000) {
        let (a, b, c) = (
            TorusMeasure::Cloud(random_cloud(s1, 30)),
            TorusMeasure::Cloud(random_cloud(s2, 30)),
            TorusMeasure::Cloud(random_cloud(s3, 30)),
        );
        let ab = coarse_distance(&a, &b, 8).unwrap();
        prop_assert!((ab - coarse_distance(&b, &a, 8).unwrap()).abs() < 1e-15);
        prop_assert!(coarse_distance(&a, &c, 8).unwrap() <= ab + coarse_distance(&b, &c, 8).unwrap() + 1e-12);
    }
}

mod srb {
    use super::*;
    use torus_lab::cone::ConeSystem;
    use torus_lab::curve::{CurveJet, DEFAULT_SPACING};

    fn perturbed() -> GeneratorLaw {
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

    fn segment() -> CurveJet {
        CurveJet::segment(
            TorusPoint::new(0.2, 0.3),
            ConeSystem::standard().unstable.bisector(),
            0.2,
            DEFAULT_SPACING,
        )
        .unwrap()
    }

    fn tv(a: &GridMeasure, b: &GridMeasure, res: usize) -> f64 {
        coarse_distance(&TorusMeasure::Grid(a.clone()), &TorusMeasure::Grid(b.clone()), res)
            .unwrap()
    }

    #[test]
    fn single_step_is_arc_length_on_the_curve() {
        let law = GeneratorLaw::uniform(vec![lin(MATRIX_A)]).unwrap();
        let seg = segment();
        let nu = srb_from_curve(&law, &seg, 1, 200_000, 3, 16).unwrap();
        let dense = (0..100_000)
            .map(|k| (TorusPoint::from_vec(seg.eval(0.2 * (k as f64 + 0.5) / 1e5).0), 1e-5))
            .collect();
        let exact = PointCloudMeasure::new(dense).unwrap().to_grid(16).unwrap();
        assert!(tv(&nu, &exact, 16) < 0.01);
    }

    #[test]
    fn conservative_law_gives_lebesgue() {
        let law = GeneratorLaw::uniform(vec![lin(MATRIX_A), lin(MATRIX_B)]).unwrap();
        let nu = srb_from_curve(&law, &segment(), 200, 20_000, 4, 32).unwrap();
        assert!(tv(&nu, &GridMeasure::lebesgue(32), 32) < 0.05);
    }

    #[test]
    fn agrees_with_the_orbit_estimate() {
        let law = perturbed();
        let nu = srb_from_curve(&law, &segment(), 300, 20_000, 5, 32).unwrap();
        let st =
            estimate_stationary(&law, TorusPoint::new(0.4, 0.6), 400, 20_000, 100, 6, 32).unwrap();
        assert!(tv(&nu, &st, 32) < 0.05);
        assert_eq!(nu, srb_from_curve(&law, &segment(), 300, 20_000, 5, 32).unwrap());
        assert!(srb_from_curve(&law, &segment(), 0, 10, 5, 32).is_err());
    }
}

mod lebesgue_starts {
    use torus_lab::measure::*;
    use torus_lab::random_system::GeneratorLaw;
    use torus_lab::torus::*;

    #[test]
    fn linear_map_from_lebesgue_stays_uniform() {
        let law = GeneratorLaw::new(vec![TorusMap::linear(MATRIX_A).unwrap()], vec![1.0]).unwrap();
        let nu = estimate_from_lebesgue(&law, 60, 20_000, 10, 3, 16).unwrap();
        let d = coarse_distance(
            &TorusMeasure::Grid(nu),
            &TorusMeasure::Grid(GridMeasure::lebesgue(16)),
            16,
        )
        .unwrap();
        assert!(d < 0.03, "tv {d}");
    }

    #[test]
    fn lebesgue_starts_are_deterministic_and_validated() {
        let law = GeneratorLaw::new(vec![TorusMap::linear(MATRIX_B).unwrap()], vec![1.0]).unwrap();
        let a = estimate_from_lebesgue(&law, 20, 100, 5, 9, 8).unwrap();
        assert_eq!(a, estimate_from_lebesgue(&law, 20, 100, 5, 9, 8).unwrap());
        assert!(estimate_from_lebesgue(&law, 5, 100, 5, 9, 8).is_err());
        assert!(estimate_from_lebesgue(&law, 20, 0, 5, 9, 8).is_err());
    }
}
