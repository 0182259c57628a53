use torus_lab::equidist::*;
use torus_lab::measure::{estimate_stationary, GridMeasure};
use torus_lab::random_system::GeneratorLaw;
use torus_lab::torus::*;
use torus_lab::LabError;

fn lin(m: [[i64; 2]; 2]) -> TorusMap {
    TorusMap::linear(m).unwrap()
}

fn perturbed_a() -> TorusMap {
    TorusMap::new(MATRIX_A, vec![FourierMode { k: [0, 1], amp: [0.04, 0.06], phase: 0.7 }], 0.05)
        .unwrap()
}

fn ab() -> GeneratorLaw {
    GeneratorLaw::uniform(vec![lin(MATRIX_A), lin(MATRIX_B)]).unwrap()
}

#[test]
fn linear_pair_shares_the_origin_at_every_period() {
    let r = common_periodic_points(&lin(MATRIX_A), &lin(MATRIX_B), 8).unwrap();
    assert_eq!(r.rows.len(), 8);
    assert!(r.dropped.is_empty());
    for row in &r.rows {
        assert!(row.common.iter().any(|p| p.x == 0.0 && p.y == 0.0), "n={}", row.n);
    }
}

#[test]
fn period_counts_follow_the_determinant_formula() {
    let lu = (3.0 + 5f64.sqrt()) / 2.0;
    let r = common_periodic_points(&lin(MATRIX_A), &lin(MATRIX_A), 12).unwrap();
    assert_eq!(r.rows[0].count_f, 1);
    assert_eq!(r.rows[1].count_f, 5);
    for row in &r.rows {
        let n = row.n as i32;
        let formula = lu.powi(n) + lu.powi(-n) - 2.0;
        assert_eq!(row.count_f as f64, formula.round());
        // every fixed point of A^n is common to (A, A)
        assert_eq!(row.common.len() as u128, row.count_f);
    }
}

#[test]
fn enumerated_points_are_fixed_and_distinct() {
    let a = lin(MATRIX_A);
    for n in 1..=7 {
        let (pts, dropped) = periodic_points(&a, n).unwrap();
        assert!(dropped.is_empty());
        let lu = (3.0 + 5f64.sqrt()) / 2.0;
        assert_eq!(pts.len() as f64, (lu.powi(n as i32) + lu.powi(-(n as i32)) - 2.0).round());
        for p in &pts {
            let mut q = *p;
            for _ in 0..n {
                q = a.apply(q);
            }
            assert!(q.dist(*p) < 1e-9);
        }
        for (i, p) in pts.iter().enumerate() {
            assert!(pts[i + 1..].iter().all(|q| q.dist(*p) > 1e-9));
        }
    }
}

#[test]
fn perturbed_points_are_refined_and_the_origin_is_lost() {
    let f = perturbed_a();
    assert!(f.phi(Vec2::zeros()).norm() > 0.0);
    for n in 1..=5 {
        let (pts, dropped) = periodic_points(&f, n).unwrap();
        assert!(dropped.is_empty(), "n={n}: {dropped:?}");
        let expect =
            common_periodic_points(&lin(MATRIX_A), &lin(MATRIX_A), n).unwrap().rows[n - 1].count_f;
        assert_eq!(pts.len() as u128, expect);
        for p in &pts {
            let mut q = *p;
            for _ in 0..n {
                q = f.apply(q);
            }
            assert!(q.dist(*p) < 1e-9);
        }
    }
    let r = common_periodic_points(&f, &lin(MATRIX_B), 3).unwrap();
    for row in &r.rows {
        assert!(row.common.iter().all(|p| p.dist(TorusPoint::new(0.0, 0.0)) > 1e-6));
    }
    let same = common_periodic_points(&f, &f, 2).unwrap();
    assert_eq!(same.rows[1].common.len(), 5);
}

#[test]
fn periodic_input_validation() {
    assert!(common_periodic_points(&lin(MATRIX_A), &lin(MATRIX_B), 0).is_err());
    assert!(common_periodic_points(&lin(MATRIX_A), &lin(MATRIX_B), 13).is_err());
    // (B, B) at period 12 has about 1.4e8 points, above the enumeration limit
    assert!(matches!(
        common_periodic_points(&lin(MATRIX_B), &lin(MATRIX_B), 12),
        Err(LabError::EnumerationTooLarge { .. })
    ));
    let csv = common_periodic_points(&lin(MATRIX_A), &lin(MATRIX_B), 2).unwrap().to_csv();
    assert!(csv.starts_with(PERIODIC_CSV_HEADER));
}

#[test]
fn resolution_one_is_always_at_distance_zero() {
    let reference = GridMeasure::lebesgue(8);
    let r =
        equidistribution_run(&ab(), TorusPoint::new(0.1, 0.2), &[1, 5, 10], 10, 1, &reference, 3)
            .unwrap();
    assert!(r.distances.iter().all(|&d| d == 0.0));
}

#[test]
fn averages_approach_the_reference() {
    let law = ab();
    let reference =
        estimate_stationary(&law, TorusPoint::new(0.3, 0.4), 400, 5_000, 100, 1, 64).unwrap();
    for (k, x0) in [TorusPoint::new(0.11, 0.73), TorusPoint::new(0.5, 0.05)].into_iter().enumerate()
    {
        let r = equidistribution_run(&law, x0, &[10, 100], 20_000, 32, &reference, 10 + k as u64)
            .unwrap();
        assert!(r.distances[1] < r.distances[0] / 2.0, "{:?}", r.distances);
        assert!(r.distances.iter().all(|&d| (0.0..=1.0).contains(&d)));
        let again =
            equidistribution_run(&law, x0, &[10, 100], 20_000, 32, &reference, 10 + k as u64)
                .unwrap();
        assert_eq!(r, again);
    }
}

#[test]
fn distances_are_stable_under_seed_change() {
    let law = ab();
    let reference = GridMeasure::lebesgue(32);
    let (words, n) = (20_000usize, 100usize);
    let a = equidistribution_run(&law, TorusPoint::new(0.2, 0.9), &[n], words, 16, &reference, 1)
        .unwrap();
    let b = equidistribution_run(&law, TorusPoint::new(0.2, 0.9), &[n], words, 16, &reference, 2)
        .unwrap();
    assert!((a.distances[0] - b.distances[0]).abs() <= 2.0 / ((words * n) as f64).sqrt());
}

#[test]
fn reference_has_full_support() {
    let reference =
        estimate_stationary(&ab(), TorusPoint::new(0.3, 0.4), 400, 5_000, 100, 1, 64).unwrap();
    assert!(min_cell_mass(&reference, 32).unwrap() > 0.0);
    let mut dirac = vec![0.0; 64];
    dirac[0] = 1.0;
    assert_eq!(min_cell_mass(&GridMeasure::from_masses(8, dirac).unwrap(), 8).unwrap(), 0.0);
}

#[test]
fn run_validation_and_csv() {
    let reference = GridMeasure::lebesgue(8);
    let law = ab();
    assert!(
        equidistribution_run(&law, TorusPoint::new(0.0, 0.0), &[], 10, 8, &reference, 1).is_err()
    );
    assert!(equidistribution_run(&law, TorusPoint::new(0.0, 0.0), &[5, 5], 10, 8, &reference, 1)
        .is_err());
    assert!(equidistribution_run(&law, TorusPoint::new(0.0, 0.0), &[0, 5], 10, 8, &reference, 1)
        .is_err());
    let r = equidistribution_run(&law, TorusPoint::new(0.3, 0.3), &[2, 4], 10, 8, &reference, 1)
        .unwrap();
    let csv = r.to_csv();
    assert!(csv.starts_with(EQUIDIST_CSV_HEADER));
    assert_eq!(csv.lines().count(), 3);
}
