use hierfss::lattice::BoundaryCondition;
use hierfss::pertflow::*;
use hierfss::quad::QuadratureConfig;
use proptest::prelude::*;

fn params(d: usize, g: f64) -> FlowParams {
    FlowParams::new(d, 1, 2, g).unwrap()
}

/// `ν_c = −Σ_k (η_k g_k − ξ_k g_k²)/Π_{0,k}` with coefficients written out independently.
fn series_critical_point(d: usize, n: usize, g0: f64, a: f64, xi0: f64, terms: usize) -> f64 {
    let l: f64 = 2.0;
    let c = 1.0 - l.powi(-(d as i32));
    let gh = (n as f64 + 2.0) / (n as f64 + 8.0);
    let mut g = g0;
    let mut prod = 1.0;
    let mut sum = 0.0;
    for k in 0..terms {
        let kf = k as f64;
        let t = 1.0 / (1.0 + a * l.powf(2.0 * kf));
        let beta = (n as f64 + 8.0) * c * t * t * l.powf(-(d as f64 - 4.0) * kf);
        let eta = (n as f64 + 2.0) * c * t * l.powf(-(d as f64 - 2.0) * kf);
        let xi = xi0 * t.powi(3) * l.powf(-(2.0 * d as f64 - 6.0) * kf);
        prod *= 1.0 - gh * beta * g;
        sum += (eta * g - xi * g * g) / prod;
        g -= beta * g * g;
    }
    -sum
}

#[test]
fn d4_coupling_follows_inverse_scale() {
    let p = params(4, 0.01);
    let traj = flow(0.0, 0.0, &p, 10_000).unwrap();
    let j = 10_000f64;
    let dev = (p.b_const() * j * traj[10_000].g - 1.0).abs();
    assert!(dev <= 5.0 * j.ln() / j, "deviation {dev}");
}

#[test]
fn derivative_in_nu0_matches_finite_difference() {
    for d in [4, 5] {
        let p = params(d, 0.01);
        let nu0 = nu_c(&p, 0.0).unwrap();
        let h = 1e-6;
        let base = flow(nu0, 0.0, &p, 100).unwrap();
        let up = flow(nu0 + h, 0.0, &p, 100).unwrap();
        let dn = flow(nu0 - h, 0.0, &p, 100).unwrap();
        for j in (1..=100).step_by(9) {
            let fd = (up[j].nu - dn[j].nu) / (2.0 * h);
            let exact = base[j].deriv.unwrap().nu_prime;
            assert!(((fd - exact) / exact).abs() < 1e-4, "d={d} j={j}: {fd} vs {exact}");
            assert!(exact > 0.0);
        }
    }
}

#[test]
fn derivative_in_mass_matches_finite_difference() {
    for d in [4, 5] {
        let p = params(d, 0.01);
        for a in [1e-2, 1e-4] {
            let nu0 = nu_c(&p, a).unwrap();
            let h = 1e-5 * a;
            let base = flow(nu0, a, &p, 100).unwrap();
            let up = flow(nu0, a + h, &p, 100).unwrap();
            let dn = flow(nu0, a - h, &p, 100).unwrap();
            let lf = p.lf();
            for j in (1..=100).step_by(9) {
                let fd = (up[j].nu - dn[j].nu) / (2.0 * h);
                let exact = base[j].deriv.unwrap().nu_dot;
                assert!(((fd - exact) / exact).abs() < 1e-4, "d={d} a={a} j={j}: {fd} vs {exact}");
                let fd_g = (up[j].g - dn[j].g) / (2.0 * h);
                let exact_g = base[j].g_dot(lf).unwrap();
                assert!(((fd_g - exact_g) / exact_g).abs() < 1e-4, "g: d={d} a={a} j={j}");
            }
        }
    }
}

#[test]
fn mass_derivative_negative_past_first_scales() {
    for d in [4, 5] {
        let p = params(d, 0.01);
        let cp = bleher_sinai_critical(&p, 0.0, p.jmax).unwrap();
        assert!(cp.trace.len() > 10);
        for t in &cp.trace[3..] {
            assert!(t.dnu_da < 0.0, "j={}", t.j);
        }
    }
}

#[test]
fn d4_nu_prime_tracks_coupling_power() {
    let p = params(4, 0.01);
    let traj = flow(0.0, 0.0, &p, 10_000).unwrap();
    let gh = p.gamma_hat();
    for s in traj.iter().step_by(97) {
        let r = s.deriv.unwrap().nu_prime * (p.g0 / s.g).powf(gh);
        assert!((0.5..=2.0).contains(&r), "j={} ratio {r}", s.j);
    }
}

#[test]
fn halving_condition_holds_for_small_coupling() {
    for d in [4, 5] {
        assert_eq!(params(d, 0.01).with_jmax(2000).halving_violation().unwrap(), None);
    }
}

#[test]
fn critical_point_matches_series_oracle() {
    for (d, g, a, xi0) in [(4, 0.01, 0.0, 0.0), (5, 0.05, 0.0, 0.0), (5, 0.02, 1e-3, 0.0), (4, 0.01, 0.0, 0.7)] {
        let p = params(d, g).with_xi0(xi0);
        let got = nu_c(&p, a).unwrap();
        let want = series_critical_point(d, 1, g, a, xi0, 400);
        assert!(((got - want) / want).abs() < 1e-10, "d={d} g={g}: {got} vs {want}");
    }
}

#[test]
fn leading_critical_point_in_d4() {
    let p = params(4, 1e-3);
    let target = -3.0 * (1.0 - 1.0 / 16.0) / (1.0 - 0.25);
    let r = nu_c(&p, 0.0).unwrap() / p.g0;
    assert!((r / target - 1.0).abs() < 0.10, "{r}");
}

#[test]
fn critical_point_increases_with_mass() {
    let p = params(4, 0.01);
    let vals: Vec<f64> = [0.0, 1e-4, 1e-3, 1e-2, 1e-1].iter().map(|&a| nu_c(&p, a).unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
}

#[test]
fn critical_trace_is_in_window_and_records_derivatives() {
    let p = params(5, 0.05);
    let cp = bleher_sinai_critical(&p, 0.0, p.jmax).unwrap();
    assert!(cp.resolved_scale >= 10);
    assert!(cp.trace.iter().all(|t| t.in_window));
    assert!(cp.trace.iter().all(|t| t.dnu_dnu0 > 0.0));
    assert!(cp.width <= BISECTION_REL_TOL * cp.nu_c.abs() * 1.01);
}

#[test]
fn large_coupling_reports_escape_scale() {
    let p = params(4, 5.0);
    assert!(matches!(nu_c(&p, 0.0), Err(hierfss::Error::FlowEscape { .. })));
}

#[test]
fn matching_reproduces_critical_value_at_scale_n() {
    let p = params(5, 0.05);
    let n = 10;
    let a = -fbc_shift(n, &p);
    let nu0 = nu_0n(a, n, &p).unwrap();
    let lhs = nu_at_scale(&p, nu0, a, n).unwrap();
    let rhs = nu_at_scale(&p, nu_c(&p, 0.0).unwrap(), 0.0, n).unwrap();
    let band = 6.0 * 3.0 * p.g0 * p.rho(n) * 2f64.powi(-2 * n as i32);
    assert!((lhs - rhs).abs() < 1e-6 * band, "{lhs} vs {rhs}");
    assert_eq!(nu_0n(0.0, n, &p).unwrap(), nu_c(&p, 0.0).unwrap());
}

#[test]
fn matching_rejects_mass_outside_interval() {
    let p = params(5, 0.05);
    assert!(nu_0n(-1.0, 10, &p).unwrap_err().is_domain());
}

#[test]
fn matching_slope_agrees_with_amplitude() {
    let p = params(5, 0.05);
    let slope = nu_0n_slope(-fbc_shift(20, &p), 20, &p).unwrap();
    let a_d = amplitude(&p).unwrap();
    assert!(((1.0 + slope) / a_d - 1.0).abs() < 1e-3);
}

#[test]
fn effective_points_and_shift() {
    let p = params(5, 0.05);
    let nuc = nu_c(&p, 0.0).unwrap();
    assert_eq!(effective_critical_point(BoundaryCondition::Periodic, 20, &p).unwrap(), nuc);
    let nf = effective_critical_point(BoundaryCondition::Free, 20, &p).unwrap();
    assert!(nf < nuc);
    let shift = fbc_critical_shift(20, &p).unwrap();
    let ratio = shift / (fbc_shift(20, &p) * amplitude(&p).unwrap());
    assert!((0.85..=1.15).contains(&ratio), "{ratio}");
}

#[test]
fn renormalized_mass_anchors() {
    for d in [4, 5] {
        let p = params(d, 0.05);
        let n = 10;
        let sc = scale_set(n, &p, amplitude(&p).unwrap()).unwrap();
        let ap = renormalized_mass(0.0, n, BoundaryCondition::Periodic, Window::W, &p, &sc).unwrap();
        assert!(ap.abs() < 1e-12 * sc.w_n.max(1e-300) + 1e-30, "d={d}: {ap}");
        let af = renormalized_mass(0.0, n, BoundaryCondition::Free, Window::W, &p, &sc).unwrap();
        let expect = -fbc_shift(n, &p);
        assert!(((af - expect) / expect).abs() < 1e-4, "d={d}: {af} vs {expect}");
    }
}

#[test]
fn renormalized_mass_in_w_window_d5() {
    let p = params(5, 0.05);
    let n = 10;
    let sc = scale_set(n, &p, amplitude(&p).unwrap()).unwrap();
    let a = renormalized_mass(1.0, n, BoundaryCondition::Periodic, Window::W, &p, &sc).unwrap();
    let expect = sc.h_n.powi(-2) * 2f64.powf(-5.0 * n as f64);
    assert!((a / expect - 1.0).abs() < 0.2, "{a} vs {expect}");
}

#[test]
fn renormalized_mass_monotone_with_small_residual() {
    for d in [4, 5] {
        let p = params(d, 0.05);
        let n = 8;
        let sc = scale_set(n, &p, amplitude(&p).unwrap()).unwrap();
        let mut prev_free = Vec::new();
        for bc in [BoundaryCondition::Periodic, BoundaryCondition::Free] {
            let nu_star = effective_critical_point(bc, n, &p).unwrap();
            let mut last = f64::NEG_INFINITY;
            let mut col = Vec::new();
            for i in 0..21 {
                let s = -1.0 + 0.1 * i as f64;
                let target = nu_star + s * sc.w_n;
                let a = renormalized_mass_with(target, n, &p).unwrap();
                let resid = (nu_1n(a, n, &p).unwrap() + a - target).abs();
                assert!(resid < 1e-12 * target.abs().max(1.0), "d={d} s={s}: {resid}");
                assert!(a > last, "d={d} {bc:?} s={s}");
                last = a;
                col.push(a);
            }
            prev_free.push(col);
        }
        assert!(prev_free[1].iter().zip(&prev_free[0]).all(|(f, p)| f < p));
    }
}

#[test]
fn large_s_prediction_matches_massive_form() {
    let p = params(4, 0.05);
    let n = 10;
    let sc = scale_set(n, &p, amplitude(&p).unwrap()).unwrap();
    let s = 1e3;
    let chi = predicted_susceptibility(s, n, &p, &sc, &QuadratureConfig::default()).unwrap();
    let asym = (sc.b * n as f64).sqrt() * 2f64.powi(2 * n as i32) / s;
    assert!((chi / asym - 1.0).abs() < 0.01, "{}", chi / asym);
}

#[test]
fn massive_regime_amplitude_d5() {
    let p = params(5, 0.05);
    let a_d = amplitude(&p).unwrap();
    for k in 6..=12 {
        let eps = 2f64.powi(-k);
        let r = eps * massive_susceptibility(eps, &p).unwrap();
        assert!((r / a_d - 1.0).abs() < 0.05, "k={k}: {r} vs {a_d}");
    }
}

#[test]
fn scale_set_d4_closed_forms() {
    let p = params(4, 0.01);
    let sc = scale_set(12, &p, 1.0).unwrap();
    assert!((sc.v_n / sc.w_n - (sc.b * 12.0).sqrt() * 12f64.powf(p.gamma_hat() - 0.5 + p.theta_hat())).abs() < 1e-9 * sc.v_n / sc.w_n);
    assert!((sc.s_fbc - fbc_shift(0, &p) * (sc.b * 12.0).sqrt()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nu_prime_positive(g in 1e-3f64..0.05, a in 0.0f64..0.5, nu0 in -0.3f64..0.3, d in 4usize..7) {
        let p = FlowParams::new(d, 1, 2, g).unwrap();
        let traj = flow(nu0, a, &p, 80).unwrap();
        prop_assert!(traj.iter().all(|s| s.deriv.unwrap().nu_prime > 0.0));
    }

    #[test]
    fn coupling_decreases_and_halves_at_most(g in 1e-3f64..0.05, a in 0.0f64..1.0, d in 4usize..7) {
        let p = FlowParams::new(d, 1, 2, g).unwrap();
        let traj = flow(0.0, a, &p, 200).unwrap();
        for w in traj.windows(2) {
            prop_assert!(w[1].g <= w[0].g && w[1].g >= 0.5 * w[0].g);
        }
    }

    #[test]
    fn flow_is_affine_in_nu0(g in 1e-3f64..0.05, x in -0.1f64..0.1, y in -0.1f64..0.1) {
        let p = FlowParams::new(5, 1, 2, g).unwrap();
        let n = 12;
        let f = |v: f64| nu_at_scale(&p, v, 0.0, n).unwrap();
        let mid = f(0.5 * (x + y));
        let avg = 0.5 * (f(x) + f(y));
        prop_assert!((mid - avg).abs() <= 1e-12 * (f(x).abs() + f(y).abs()) + 1e-300);
    }
}
