use hierfss::exactrg::*;
use hierfss::lattice::{free_susceptibility, BoundaryCondition, LatticeSpec};
use hierfss::pertflow::{effective_critical_point, FlowParams};
use hierfss::profiles::universal_ratio_at_zero;
use hierfss::quad::QuadratureConfig;
use hierfss::special::log_angular_laplace;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cfg() -> QuadratureConfig {
    QuadratureConfig::default()
}

const BCS: [BoundaryCondition; 2] = [BoundaryCondition::Periodic, BoundaryCondition::Free];

#[test]
fn init_potential_examples() {
    let grid = uniform_grid(3.0, 31);
    let w = init_potential(0.0, 1.0, 1, &grid).unwrap();
    for (r, v) in grid.iter().zip(&w.values) {
        assert!((v - 0.5 * r * r).abs() < 1e-15);
    }
    let w = init_potential(0.1, -0.2, 1, &uniform_grid(2.0, 11)).unwrap();
    assert_eq!(w.values[0], 0.0);
    assert!(w.values[10].abs() < 1e-15);
    assert_eq!(w.j, 0);
    assert!(init_potential(-1.0, 0.0, 1, &grid).is_err());
}

#[test]
fn fluctuation_variance_is_scale_dependent() {
    let spec = LatticeSpec::new(2, 4, 3).unwrap();
    let f0 = FluctuationSpec::for_step(&spec, 0, 0.0).unwrap();
    let f2 = FluctuationSpec::for_step(&spec, 2, 0.0).unwrap();
    assert_eq!(f0.m, 16);
    assert!((f0.sigma2 - 1.0).abs() < 1e-15);
    assert!((f2.sigma2 - 16.0 / 256.0).abs() < 1e-15);
    assert!(FluctuationSpec::for_step(&spec, 2, -1.0 / 16.0).is_err());
}

#[test]
fn fluctuations_sum_to_zero() {
    let spec = LatticeSpec::new(2, 5, 2).unwrap();
    for n in [1, 3] {
        assert!(max_block_sum(&spec, 1, n, &MCConfig::new(500, 3)) < 1e-13);
    }
}

#[test]
fn gaussian_step_scales_curvature_by_block_count() {
    let spec = LatticeSpec::new(2, 4, 2).unwrap();
    let grid = uniform_grid(4.0, 64);
    for n in [1, 2] {
        let w = init_potential(0.0, 0.3, n, &grid).unwrap();
        let out = rg_step_on_grid(&w, 0.0, &spec, &MCConfig::new(64, 1), &grid).unwrap();
        for (r, v) in grid.iter().zip(&out.values) {
            assert!((v - 16.0 * 0.15 * r * r).abs() < 1e-9 * (1.0 + v.abs()), "n={n} r={r}");
        }
        assert!(out.stderr.iter().all(|s| *s < 1e-9));
    }
}

#[test]
fn gaussian_pipeline_reproduces_free_susceptibility() {
    let spec = LatticeSpec::new(2, 4, 3).unwrap();
    let mc = MCConfig::new(1000, 7);
    for (a, nu) in [(0.0, 0.05), (0.02, 0.03)] {
        let ws = run_pipeline(&spec, 1, 0.0, nu, a, &mc).unwrap();
        for w in &ws[1..] {
            let s: Vec<f64> = w.grid.iter().map(|r| r * r).collect();
            let slope = w.values.last().unwrap() / s.last().unwrap();
            let resid = s.iter().zip(&w.values).map(|(s, v)| (v - slope * s).abs()).fold(0.0, f64::max);
            assert!(resid < 1e-8 * w.values.last().unwrap().abs());
        }
        for bc in BCS {
            let o = zero_mode_observables(ws.last().unwrap(), bc, a, &spec, &ObservableRequest::default(), &cfg()).unwrap();
            let exact = free_susceptibility(&spec, bc, a + nu).unwrap();
            assert!((o.susceptibility / exact - 1.0).abs() < 1e-6, "{bc:?}");
            assert!((o.kurtosis - 3.0).abs() < 1e-6);
        }
    }
}

#[test]
fn flat_potential_gives_massive_susceptibility() {
    let spec = LatticeSpec::new(2, 4, 2).unwrap();
    let w = init_potential(0.0, 0.0, 1, &uniform_grid(1.0, 32)).unwrap();
    let o = zero_mode_observables(&w, BoundaryCondition::Periodic, 0.3, &spec, &ObservableRequest::default(), &cfg()).unwrap();
    assert!((o.susceptibility - 1.0 / 0.3).abs() < 1e-8);
    let o = zero_mode_observables(&w, BoundaryCondition::Free, 0.0, &spec, &ObservableRequest::default(), &cfg()).unwrap();
    assert!((o.susceptibility - 1.0 / spec.fbc_mass()).abs() < 1e-8 / spec.fbc_mass());
    assert!(zero_mode_observables(&w, BoundaryCondition::Periodic, 0.0, &spec, &ObservableRequest::default(), &cfg()).is_err());
}

#[test]
fn observables_reject_inadmissible_mass() {
    let spec = LatticeSpec::new(2, 4, 2).unwrap();
    let w = init_potential(0.1, 0.0, 1, &uniform_grid(5.0, 32)).unwrap();
    let err = zero_mode_observables(&w, BoundaryCondition::Free, -0.3, &spec, &ObservableRequest::default(), &cfg()).unwrap_err();
    assert!(err.is_domain());
}

#[test]
fn one_step_matches_direct_sampling() {
    let spec = LatticeSpec::new(2, 4, 1).unwrap();
    let (g, nu) = (0.1, -0.2);
    let w0 = init_potential(g, nu, 1, &uniform_grid(initial_range(g, nu).unwrap(), GRID_POINTS)).unwrap();
    let grid = uniform_grid(2.0, 40);
    let rg = rg_step_on_grid(&w0, 0.0, &spec, &MCConfig::new(20_000, 7), &grid).unwrap();
    let direct = direct_mc_check(&spec, 1, g, nu, 0.0, &grid, 200_000, 11).unwrap();
    let within = (0..grid.len())
        .filter(|&i| {
            let se = (rg.stderr[i].powi(2) + direct.stderr[i].powi(2)).sqrt();
            (rg.values[i] + rg.log_offset - direct.values[i]).abs() <= 2.0 * se
        })
        .count();
    assert!(within as f64 >= 0.95 * grid.len() as f64, "{within}/40");
}

#[test]
fn direct_sampling_gaussian_oracle() {
    // g = 0: Σ_x ν(y + φ_x)²/2 with Σ_x φ_x = 0 gives ½νΩy² + const.
    let spec = LatticeSpec::new(2, 4, 2).unwrap();
    let grid = uniform_grid(1.0, 5);
    let d = direct_mc_check(&spec, 1, 0.0, 0.5, 0.0, &grid, 2000, 5).unwrap();
    for (y, v) in grid.iter().zip(&d.values) {
        let expect = 0.5 * 0.5 * 256.0 * y * y + d.values[0];
        assert!((v - expect).abs() < 1e-8 * (1.0 + expect.abs()), "y={y}");
    }
}

#[test]
fn direct_sampling_grows_quartically() {
    let spec = LatticeSpec::new(2, 4, 1).unwrap();
    let grid = [0.0, 8.0, 11.0, 16.0, 22.0, 32.0];
    let d = direct_mc_check(&spec, 1, 0.1, -0.2, 0.0, &grid, 4000, 5).unwrap();
    let xs: Vec<f64> = grid[1..].iter().map(|y| y.ln()).collect();
    let ys: Vec<f64> = d.values[1..].iter().map(|v| (v - d.values[0]).ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 5.0, ys.iter().sum::<f64>() / 5.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((3.8..=4.2).contains(&slope), "slope {slope}");
}

#[test]
fn direct_sampling_rejects_deep_hierarchies() {
    let spec = LatticeSpec::new(2, 4, 3).unwrap();
    assert!(direct_mc_check(&spec, 1, 0.1, 0.0, 0.0, &[0.0, 1.0], 10, 1).is_err());
}

#[test]
fn radial_laplace_matches_three_dimensional_sampling() {
    let spec = LatticeSpec::new(2, 4, 1).unwrap();
    let (g, nu, a, jv) = (0.05, -0.1, 0.01, 0.4);
    let w = init_potential(g, nu, 3, &uniform_grid(6.0, 256)).unwrap();
    let req = ObservableRequest {
        moments: vec![1],
        laplace: vec![jv],
    };
    let o = zero_mode_observables(&w, BoundaryCondition::Periodic, a, &spec, &req, &cfg()).unwrap();
    let radial = o.laplace[0].1;
    // Self-normalized importance sampling in ℝ³ with a Gaussian proposal.
    let vol = spec.volume();
    let log_target = |y: [f64; 3]| {
        let s = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
        -(0.25 * g * s * s + 0.5 * nu * s) - 0.5 * a * vol * s
    };
    let sd = 2.5;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let k = 400_000;
    let (mut sw, mut swf, mut sw2, mut sw2f, mut sw2f2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..k {
        let y: [f64; 3] = std::array::from_fn(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        });
        let s = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
        let wt = (log_target(y) + 0.5 * s / (sd * sd)).exp();
        let f = (jv * y[0]).exp();
        sw += wt;
        swf += wt * f;
        sw2 += wt * wt;
        sw2f += wt * wt * f;
        sw2f2 += wt * wt * f * f;
    }
    let est = swf / sw;
    let var = (sw2f2 - 2.0 * est * sw2f + est * est * sw2) / (sw * sw);
    assert!((radial - est).abs() <= 2.0 * var.sqrt(), "radial {radial} mc {est} se {}", var.sqrt());
    assert!(log_angular_laplace(3, 0.0).abs() < 1e-15);
}

#[test]
fn laplace_value_at_zero_source_is_one() {
    let spec = LatticeSpec::new(2, 4, 1).unwrap();
    for n in [1, 2, 4] {
        let w = init_potential(0.2, -0.1, n, &uniform_grid(4.0, 64)).unwrap();
        let req = ObservableRequest {
            moments: vec![1, 2],
            laplace: vec![0.0],
        };
        let o = zero_mode_observables(&w, BoundaryCondition::Periodic, 0.05, &spec, &req, &cfg()).unwrap();
        assert!((o.laplace[0].1 - 1.0).abs() < 1e-10);
    }
}

#[test]
fn fixed_seed_is_deterministic() {
    let spec = LatticeSpec::new(2, 5, 2).unwrap();
    let mc = MCConfig::new(400, 42);
    let a = run_pipeline(&spec, 1, 0.1, -0.2, 0.0, &mc).unwrap();
    let b = run_pipeline(&spec, 1, 0.1, -0.2, 0.0, &mc).unwrap();
    assert_eq!(a, b);
    let oa = zero_mode_observables(
        a.last().unwrap(),
        BoundaryCondition::Free,
        0.0,
        &spec,
        &ObservableRequest::default(),
        &cfg(),
    )
    .unwrap();
    let ob = zero_mode_observables(
        b.last().unwrap(),
        BoundaryCondition::Free,
        0.0,
        &spec,
        &ObservableRequest::default(),
        &cfg(),
    )
    .unwrap();
    assert_eq!(serde_json::to_string(&oa).unwrap(), serde_json::to_string(&ob).unwrap());
    let c = run_pipeline(&spec, 1, 0.1, -0.2, 0.0, &MCConfig::new(400, 43)).unwrap();
    assert_ne!(a.last().unwrap().values, c.last().unwrap().values);
}

#[test]
fn checkpoint_round_trips() {
    let spec = LatticeSpec::new(2, 4, 1).unwrap();
    let ws = run_pipeline(&spec, 2, 0.1, -0.2, 0.0, &MCConfig::new(200, 3)).unwrap();
    let w = ws.last().unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, w, &[3]).unwrap();
    let (back, header) = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(&back, w);
    assert_eq!(header.seed_lineage, vec![3]);
    assert!(read_checkpoint("not json\n".as_bytes()).is_err());
}

#[test]
fn under_coverage_is_reported() {
    let spec = LatticeSpec::new(2, 4, 1).unwrap();
    let w = init_potential(0.0, 0.001, 1, &uniform_grid(0.2, 32)).unwrap();
    let grid = uniform_grid(0.2, 8);
    let err = rg_step_on_grid(&w, 0.0, &spec, &MCConfig::new(100, 1), &grid).unwrap_err();
    assert!(matches!(err, hierfss::Error::GridUnderCoverage { .. }));
}

#[test]
fn odd_antithetic_budget_is_rejected() {
    let spec = LatticeSpec::new(2, 4, 1).unwrap();
    let w = init_potential(0.1, 0.0, 1, &uniform_grid(4.0, 32)).unwrap();
    assert!(rg_step(&w, 0.0, &spec, &MCConfig::new(101, 1)).is_err());
    assert!(rg_step(&w, 0.0, &spec, &MCConfig::new(1, 1)).is_err());
}

#[test]
fn free_effective_point_lies_below_periodic() {
    let spec = LatticeSpec::new(2, 5, 3).unwrap();
    let mc = MCConfig::new(1000, 7);
    let scan = ScanConfig {
        nu_lo: -0.4,
        nu_hi: -0.24,
        step: 0.01,
        tol: 1e-5,
        max_iter: 40,
    };
    let p = locate_effective_critical(&spec, BoundaryCondition::Periodic, 1, 0.1, &mc, &scan, &cfg()).unwrap();
    let f = locate_effective_critical(&spec, BoundaryCondition::Free, 1, 0.1, &mc, &scan, &cfg()).unwrap();
    assert!(f.nu_physical < p.nu_physical);
    assert!((p.kurtosis / p.target - 1.0).abs() < 0.1);
    let gap = (p.nu_physical - f.nu_physical) / spec.fbc_mass();
    assert!((0.5..=2.0).contains(&gap), "gap ratio {gap}");
}

#[test]
fn periodic_point_agrees_with_perturbative_flow() {
    let g = 0.01;
    let spec = LatticeSpec::new(2, 5, 4).unwrap();
    let scan = ScanConfig {
        nu_lo: -0.1,
        nu_hi: 0.0,
        step: 0.005,
        tol: 1e-5,
        max_iter: 40,
    };
    let est = locate_effective_critical(&spec, BoundaryCondition::Periodic, 1, g, &MCConfig::new(2000, 7), &scan, &cfg()).unwrap();
    let p = FlowParams::new(5, 1, 2, g).unwrap();
    let pert = effective_critical_point(BoundaryCondition::Periodic, 4, &p).unwrap();
    assert!((est.nu_physical - pert).abs() < spec.fbc_mass(), "{} vs {pert}", est.nu_physical);
}

#[test]
fn collapse_metric_vanishes_on_pure_quartic() {
    let w = init_potential(1.0, 0.0, 1, &uniform_grid(3.0, 256)).unwrap();
    assert!((self_normalized_scale(&w).unwrap() - 1.0).abs() < 1e-10);
    assert!(collapse_deviation(&w).unwrap() < 1e-10);
    let w = init_potential(1.0, 0.5, 1, &uniform_grid(3.0, 256)).unwrap();
    assert!(collapse_deviation(&w).unwrap() > 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn moments_obey_cauchy_schwarz_and_gaussian_bound(g in 0.02f64..1.0, nu in -0.5f64..0.5, n in 1usize..4, a in 0.001f64..0.5) {
        let spec = LatticeSpec::new(2, 4, 1).unwrap();
        let w = init_potential(g, nu, n, &uniform_grid(initial_range(g, nu).unwrap(), 128)).unwrap();
        let req = ObservableRequest { moments: vec![1, 2], laplace: vec![] };
        let o = zero_mode_observables(&w, BoundaryCondition::Periodic, a, &spec, &req, &cfg()).unwrap();
        let (m1, m2) = (o.moments[0].1, o.moments[1].1);
        prop_assert!(m1 > 0.0 && m2 > 0.0);
        prop_assert!(m1 * m1 <= m2 * (1.0 + 1e-10));
        prop_assert!(m2 <= (n as f64 + 2.0) / n as f64 * m1 * m1 * (1.0 + 1e-8));
    }

    #[test]
    fn kurtosis_target_is_between_ordered_and_gaussian(n in 1usize..6) {
        let r = universal_ratio_at_zero(n as f64, 2);
        prop_assert!(r > 1.0 && r < (n as f64 + 2.0) / n as f64);
    }
}
