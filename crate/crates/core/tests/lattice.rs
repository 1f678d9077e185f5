use hierfss::lattice::*;
use proptest::prelude::*;

const BCS: [BoundaryCondition; 2] = [BoundaryCondition::Periodic, BoundaryCondition::Free];

fn spec(l: usize, d: usize, n: usize) -> LatticeSpec {
    LatticeSpec::new(l, d, n).unwrap()
}

fn max_diff(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
    a.sub(b).max_abs()
}

#[test]
fn site_count_matches_distinct_coordinates() {
    let s = spec(3, 2, 2);
    let mut seen = std::collections::HashSet::new();
    for x in 0..s.site_count() {
        seen.insert(s.coordinates(x).unwrap());
    }
    assert_eq!(seen.len(), 81);
}

#[test]
fn coalescence_brute_force_blocks() {
    // Blocks of {0..7} at scale j are runs of length 2^j.
    let s = spec(2, 1, 3);
    for x in 0..8 {
        for y in 0..8 {
            let brute = (0..=3).find(|&j| x >> j == y >> j).unwrap();
            assert_eq!(coalescence_scale(&s, x, y).unwrap(), brute);
        }
    }
}

#[test]
fn group_identity_and_inverse() {
    let s = spec(2, 1, 3);
    assert_eq!(group_add(&s, 1, 1).unwrap(), 0);
    for x in 0..8 {
        assert_eq!(group_add(&s, x, 0).unwrap(), x);
    }
    assert!(group_add(&s, 8, 0).is_err());
}

#[test]
fn step_matrix_row_sums_and_sign() {
    for (l, d, n) in [(2, 4, 2), (3, 1, 3), (2, 2, 3)] {
        let s = spec(l, d, n);
        let jf = step_matrix(&s, BoundaryCondition::Free).unwrap();
        let jp = step_matrix(&s, BoundaryCondition::Periodic).unwrap();
        let defect = s.lf().powi(-2 * n as i32);
        for (rf, rp) in jf.row_sums().iter().zip(jp.row_sums()) {
            assert!((rf - (1.0 - defect)).abs() < 1e-12);
            assert!((rp - 1.0).abs() < 1e-12);
        }
        assert!(jf.entries.iter().chain(&jp.entries).all(|v| *v >= 0.0));
        assert!((0..jf.dim).all(|x| jf.get(x, x) == 0.0));
        assert!(jf.asymmetry() < 1e-12 && jp.asymmetry() < 1e-12);
    }
}

#[test]
fn laplacian_row_sums_and_difference() {
    let s = spec(2, 4, 2);
    let lp = laplacian(&s, BoundaryCondition::Periodic).unwrap();
    let lf = laplacian(&s, BoundaryCondition::Free).unwrap();
    assert!(lp.row_sums().iter().all(|r| r.abs() < 1e-12));
    assert!(lf.row_sums().iter().all(|r| (r - s.fbc_mass()).abs() < 1e-12));
    let qn = block_projection(&s, 2).unwrap().scale(s.fbc_mass());
    assert!(max_diff(&lf.sub(&lp), &qn) < 1e-14);
}

#[test]
fn projection_algebra() {
    for (l, d, n) in [(2, 4, 2), (2, 2, 3), (3, 1, 2)] {
        let s = spec(l, d, n);
        let ps: Vec<SquareMatrix> = (1..=n).map(|j| scale_projection(&s, j).unwrap()).collect();
        let mut total = block_projection(&s, n).unwrap();
        for (i, p) in ps.iter().enumerate() {
            assert!(max_diff(&p.matmul(p), p) < 1e-12);
            for (k, q) in ps.iter().enumerate() {
                if k != i {
                    assert!(p.matmul(q).max_abs() < 1e-12);
                }
            }
            total = total.add(p);
        }
        assert!(max_diff(&total, &SquareMatrix::identity(s.site_count())) < 1e-12);
    }
}

#[test]
fn covariance_annihilates_constants() {
    let s = spec(2, 2, 3);
    for j in 1..=3 {
        let c = covariance_component(&s, j, 0.1).unwrap();
        assert!(c.row_sums().iter().all(|r| r.abs() < 1e-12));
    }
    assert_eq!(gamma_j(2.0, 3, 0.0), 16.0);
}

#[test]
fn resolvent_inverts_laplacian() {
    let s = spec(2, 4, 2);
    for bc in BCS {
        for a in [0.3, 0.05, -0.01] {
            let r = resolvent(&s, bc, a).unwrap();
            let op = laplacian(&s, bc).unwrap().shift_diagonal(a);
            assert!(max_diff(&op.matmul(&r), &SquareMatrix::identity(256)) < 1e-10, "{bc:?} a={a}");
            let dense = op.inverse().unwrap();
            assert!(max_diff(&dense, &r) < 1e-10);
        }
    }
}

#[test]
fn free_susceptibilities() {
    let s = spec(2, 4, 2);
    let rp = resolvent(&s, BoundaryCondition::Periodic, 0.3).unwrap();
    assert!(rp.row_sums().iter().all(|v| (v - 1.0 / 0.3).abs() < 1e-10));
    let rf = resolvent(&s, BoundaryCondition::Free, 0.0).unwrap();
    let expect = s.lf().powi(4) / s.q();
    assert!(rf.row_sums().iter().all(|v| (v - expect).abs() < 1e-10 * expect));
    assert!((free_susceptibility(&s, BoundaryCondition::Free, 0.0).unwrap() - expect).abs() < 1e-12 * expect);
}

#[test]
fn mass_below_floor_is_rejected() {
    let s = spec(2, 4, 2);
    let floor = mass_floor(&s);
    assert!((floor + 0.25).abs() < 1e-15);
    assert!(covariance_component(&s, 1, floor).unwrap_err().is_domain());
}

#[test]
fn greens_diagonal_limits() {
    let g: Vec<f64> = [0.0, 0.1, 1.0, 10.0, 1e4].iter().map(|&a| greens_diagonal(2, 4, a).unwrap()).collect();
    assert!(g.windows(2).all(|w| w[1] < w[0]));
    assert!(g[4] < 1e-3);
    assert!(greens_diagonal(2, 2, 0.0).is_err());
}

#[test]
fn finite_volume_diagonal_approaches_infinite_volume() {
    let a = 0.2;
    let inf = greens_diagonal(2, 2, a).unwrap();
    let errs: Vec<f64> = (1..=3)
        .map(|n| {
            let r = resolvent(&spec(2, 2, n), BoundaryCondition::Periodic, a).unwrap();
            (r.get(0, 0) - inf).abs()
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn size_cap_is_enforced() {
    let s = spec(2, 4, 4);
    assert!(matches!(step_matrix(&s, BoundaryCondition::Free), Err(hierfss::Error::SizeCap { .. })));
}

#[test]
fn csv_export_round_trips() {
    let s = spec(2, 1, 2);
    let m = resolvent(&s, BoundaryCondition::Free, 0.1).unwrap();
    let back: Vec<f64> = m
        .to_csv()
        .lines()
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    assert_eq!(back, m.entries);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn translation_invariance(x in 0usize..256, y in 0usize..256, z in 0usize..256) {
        let s = spec(2, 4, 2);
        let (xz, yz) = (group_add(&s, x, z).unwrap(), group_add(&s, y, z).unwrap());
        prop_assert_eq!(coalescence_scale(&s, xz, yz).unwrap(), coalescence_scale(&s, x, y).unwrap());
    }

    #[test]
    fn ultrametric(x in 0usize..512, y in 0usize..512, z in 0usize..512) {
        let s = spec(2, 3, 3);
        let j = |a, b| coalescence_scale(&s, a, b).unwrap();
        prop_assert!(j(x, z) <= j(x, y).max(j(y, z)));
    }

    #[test]
    fn constants_are_positive(l in 2usize..6, d in 1usize..7, alpha in 0.5f64..3.0) {
        let s = LatticeSpec::with_alpha(l, d, 1, alpha).unwrap();
        prop_assert!(s.q() > 0.0 && s.q() <= 1.0);
        prop_assert!(s.z() > 0.0 && s.z().is_finite());
    }

    #[test]
    fn resolvent_identity_random_mass(u in 0.0f64..1.0) {
        let s = spec(2, 4, 2);
        let a = -0.24 + 2.0 * u;
        for bc in BCS {
            if bc == BoundaryCondition::Periodic && a.abs() < 1e-3 {
                continue;
            }
            let r = resolvent(&s, bc, a).unwrap();
            let op = laplacian(&s, bc).unwrap().shift_diagonal(a);
            prop_assert!(max_diff(&op.matmul(&r), &SquareMatrix::identity(256)) < 1e-10);
        }
    }
}
