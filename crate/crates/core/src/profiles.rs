//! Universal finite-size-scaling profiles.
//!
//! The basic object is `I_k(s) = ∫₀^∞ x^k e^{−x⁴/4 − s x²/2} dx`. Moments of the
//! limiting zero-mode distribution are ratios `Σ_{n,k}(s) = I_{k+n−1}(s)/I_{n−1}(s)`
//! and the susceptibility profile is `f_n(s) = Σ_{n,2}(s)/n`, extended to
//! `n ∈ [−2, 0]` through `f_n = 1/((n+2) f_{n+2} + s)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, tail_cutoff, Estimate, QuadratureConfig, TailPolicy};
use crate::special::{erfcx, gamma, ln_gamma};

/// Arguments of a profile evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    /// Real-extended component number, `n > −2`.
    pub n: f64,
    /// Window coordinate.
    pub s: f64,
    /// Moment order.
    pub k: f64,
}

impl ProfileParams {
    /// Checks `n > −2` and, when moments are needed (`n > 0`), `k > −n`.
    pub fn validate(&self) -> Result<()> {
        if !(self.n > -2.0) && self.n != -2.0 {
            return Err(Error::param("n", format!("must be at least -2, got {}", self.n)));
        }
        if self.n > 0.0 && !(self.k > -self.n) {
            return Err(Error::param("k", format!("must exceed -n = {}", -self.n)));
        }
        if !self.s.is_finite() {
            return Err(Error::param("s", "must be finite"));
        }
        Ok(())
    }
}

/// `log I_k(s)` with the relative error of the quadrature.
pub fn log_integral_i(k: f64, s: f64, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
    if !(k > -1.0) {
        return Err(Error::param("k", format!("I_k requires k > -1, got {k}")));
    }
    if !s.is_finite() {
        return Err(Error::param("s", "must be finite"));
    }
    let h = |x: f64| k * x.ln() - 0.25 * x.powi(4) - 0.5 * s * x * x;
    let dh = |x: f64| k / x - x.powi(3) - s * x;

    // Interior maximum of h: x*² solves y² + s y − k = 0.
    let disc = s * s + 4.0 * k;
    let peak = if disc >= 0.0 {
        let y = 0.5 * (-s + disc.sqrt());
        (y > 0.0).then(|| y.sqrt())
    } else {
        None
    };
    let (shift, width) = match peak {
        Some(xp) => {
            let curv = k / (xp * xp) + 3.0 * xp * xp + s;
            (h(xp), 1.0 / curv.abs().max(1e-300).sqrt())
        }
        None => (0.0, 1.0),
    };
    let scaled = |x: f64| {
        if x == 0.0 {
            return if k == 0.0 { (-shift).exp() } else { 0.0 };
        }
        (h(x) - shift).exp()
    };

    let start = peak.unwrap_or(0.0).max(1.0);
    let upper = match cfg.tail {
        TailPolicy::Fixed(r) => r,
        TailPolicy::Bound => tail_cutoff(|x| h(x) - shift, dh, start, cfg.tail_budget() * width.min(1.0))?,
    };

    let x_a = peak.map_or(1.0, |xp| (0.5 * xp).min(1.0)).min(upper);
    let near_zero = integrate_near_zero(k, x_a, |x| -0.25 * x.powi(4) - 0.5 * s * x * x - shift, cfg)?;

    let mut points = vec![x_a];
    if let Some(xp) = peak {
        for off in [-4.0, -1.0, 0.0, 1.0, 4.0] {
            let p = xp + off * width;
            if p > x_a && p < upper {
                points.push(p);
            }
        }
    }
    points.push(upper);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let main = if points.len() < 2 {
        Estimate { value: 0.0, error: 0.0 }
    } else {
        integrate(scaled, &points, cfg)?
    };

    let total = near_zero.value + main.value;
    if !(total > 0.0) {
        return Err(Error::Quadrature {
            achieved: f64::INFINITY,
            requested: cfg.abs_tol,
        });
    }
    let err = (near_zero.error + main.error) / total;
    Ok((shift + total.ln(), err))
}

/// `∫₀^{x_a} x^k e^{g(x)} dx` for `k > −1`; non-integer `k` uses `x = u^q`
/// with `q(k+1)` a positive integer so the integrand is regular at 0.
fn integrate_near_zero<G: Fn(f64) -> f64>(k: f64, x_a: f64, g: G, cfg: &QuadratureConfig) -> Result<Estimate> {
    if x_a <= 0.0 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    if k >= 0.0 && k.fract() == 0.0 {
        let kk = k as i32;
        return integrate(|x| x.powi(kk) * g(x).exp(), &[0.0, x_a], cfg);
    }
    let p = (k + 1.0).ceil();
    let q = p / (k + 1.0);
    let pp = p as i32 - 1;
    let u_a = x_a.powf(1.0 / q);
    integrate(|u| q * u.powi(pp) * g(u.powf(q)).exp(), &[0.0, u_a], cfg)
}

/// `I_k(s)` with its absolute error estimate.
pub fn integral_i(k: f64, s: f64, cfg: &QuadratureConfig) -> Result<Estimate> {
    let (l, rel) = log_integral_i(k, s, cfg)?;
    let value = l.exp();
    Ok(Estimate { value, error: rel * value })
}

/// Closed form `I_k(0) = 2^{(k−3)/2} Γ((k+1)/4)`.
pub fn integral_i_at_zero(k: f64) -> f64 {
    2f64.powf(0.5 * (k - 3.0)) * gamma(0.25 * (k + 1.0))
}

/// Leading asymptotic form of `I_k(s)`: `2^{(k−1)/2} Γ((k+1)/2) s^{−(k+1)/2}`
/// for `s > 0` and `√π |s|^{(k−1)/2} e^{s²/4}` for `s < 0`.
pub fn integral_i_asymptotic(k: f64, s: f64) -> f64 {
    if s > 0.0 {
        2f64.powf(0.5 * (k - 1.0)) * gamma(0.5 * (k + 1.0)) * s.powf(-0.5 * (k + 1.0))
    } else {
        PI.sqrt() * s.abs().powf(0.5 * (k - 1.0)) * (0.25 * s * s).exp()
    }
}

/// Faxén integral `Fi(α, β; y) = ∫₀^∞ e^{−t + y t^α} t^{β−1} dt`.
pub fn faxen(alpha: f64, beta: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let (l, _) = log_faxen(alpha, beta, y, cfg)?;
    Ok(l.exp())
}

/// `log Fi(α, β; y)` with relative error.
pub fn log_faxen(alpha: f64, beta: f64, y: f64, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("must lie in [0,1), got {alpha}")));
    }
    if !(beta > 0.0) {
        return Err(Error::param("beta", format!("must be positive, got {beta}")));
    }
    let h = |t: f64| (beta - 1.0) * t.ln() - t + y * t.powf(alpha);
    let dh = |t: f64| (beta - 1.0) / t - 1.0 + alpha * y * t.powf(alpha - 1.0);

    // Locate the interior maximum on a log grid, then refine by golden section.
    let mut best_t = 1.0;
    let mut best_h = h(1.0);
    let mut t = 1e-8;
    while t < 1e8 {
        let v = h(t);
        if v > best_h {
            best_h = v;
            best_t = t;
        }
        t *= 1.2;
    }
    let (mut lo, mut hi) = (best_t / 1.2, best_t * 1.2);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if h(a) > h(b) {
            hi = b;
        } else {
            lo = a;
        }
        if hi - lo < 1e-14 * hi {
            break;
        }
    }
    let tp = 0.5 * (lo + hi);
    let shift = h(tp).max(0.0);
    let curv = (-(beta - 1.0) / (tp * tp) + alpha * (alpha - 1.0) * y * tp.powf(alpha - 2.0)).abs();
    let width = if curv > 0.0 { 1.0 / curv.sqrt() } else { 1.0 };

    let upper = match cfg.tail {
        TailPolicy::Fixed(r) => r,
        TailPolicy::Bound => tail_cutoff(|t| h(t) - shift, dh, tp.max(1.0), cfg.tail_budget() * width.min(1.0))?,
    };
    let t_a = (0.5 * tp).min(1.0).min(upper);
    let g = |t: f64| -t + y * t.powf(alpha) - shift;
    let near_zero = if beta < 1.0 {
        // t = u^{1/β}: t^{β−1} dt = du/β.
        integrate(|u| g(u.powf(1.0 / beta)).exp() / beta, &[0.0, t_a.powf(beta)], cfg)?
    } else {
        integrate(|t| t.powf(beta - 1.0) * g(t).exp(), &[0.0, t_a], cfg)?
    };
    let mut points = vec![t_a];
    for off in [-4.0, 0.0, 4.0] {
        let p = tp + off * width;
        if p > t_a && p < upper {
            points.push(p);
        }
    }
    points.push(upper);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let main = integrate(|t| (h(t) - shift).exp(), &points, cfg)?;
    let total = near_zero.value + main.value;
    Ok((shift + total.ln(), (near_zero.error + main.error) / total))
}

/// `Σ_{n,k}(s) = I_{k+n−1}(s) / I_{n−1}(s)` for `n > 0`, `k > −n`.
pub fn sigma_moment(n: f64, k: f64, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
    ProfileParams { n, s, k }.validate()?;
    if !(n > 0.0) {
        return Err(Error::param("n", "moments require n > 0"));
    }
    if k == 0.0 {
        return Ok(1.0);
    }
    let (num, _) = log_integral_i(k + n - 1.0, s, cfg)?;
    let (den, _) = log_integral_i(n - 1.0, s, cfg)?;
    Ok((num - den).exp())
}

/// Leading asymptotics of `Σ_{n,k}(s)`: `Γ((n+k)/2)/Γ(n/2) (2/s)^{k/2}` for
/// `s > 0` and `|s|^{k/2}` for `s < 0`.
pub fn sigma_asymptotic(n: f64, k: f64, s: f64) -> f64 {
    if s > 0.0 {
        (ln_gamma(0.5 * (n + k)) - ln_gamma(0.5 * n)).exp() * (2.0 / s).powf(0.5 * k)
    } else {
        s.abs().powf(0.5 * k)
    }
}

/// `f_0(s) = (√π/2) e^{s²/4} erfc(s/2)`.
pub fn f0_closed_form(s: f64) -> f64 {
    0.5 * PI.sqrt() * erfcx(0.5 * s)
}

/// Closed form `f_n(0) = Γ((n+2)/4) / (2 Γ((n+4)/4))`.
pub fn f_n_at_zero(n: f64) -> f64 {
    0.5 * (ln_gamma(0.25 * (n + 2.0)) - ln_gamma(0.25 * (n + 4.0))).exp()
}

/// Universal profile `f_n(s)` for real `n ≥ −2`.
pub fn profile_f(n: f64, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
    ProfileParams { n, s, k: 2.0 }.validate()?;
    if n == -2.0 {
        if s > 0.0 {
            return Ok(1.0 / s);
        }
        return Err(Error::PoleProximity { n, s, s_star: 0.0 });
    }
    if n == 0.0 {
        return Ok(f0_closed_form(s));
    }
    if n > 0.0 {
        let (num, _) = log_integral_i(n + 1.0, s, cfg)?;
        let (den, _) = log_integral_i(n - 1.0, s, cfg)?;
        return Ok((num - den).exp() / n);
    }
    if let Some(s_star) = profile_pole(n, cfg)? {
        if s <= s_star + 1e-9 * (1.0 + s_star.abs()) {
            return Err(Error::PoleProximity { n, s, s_star });
        }
    }
    let denom = (n + 2.0) * profile_f(n + 2.0, s, cfg)? + s;
    Ok(1.0 / denom)
}

/// Pole `s_n* = sup{s : (n+2) f_{n+2}(s) + s = 0}` of `f_n` for `n ∈ (−2, 0)`.
///
/// Returns `None` when the denominator stays positive on `s ≥ −64`, and for `n ≥ 0`.
pub fn profile_pole(n: f64, cfg: &QuadratureConfig) -> Result<Option<f64>> {
    if n >= 0.0 {
        return Ok(None);
    }
    if n <= -2.0 {
        return Ok(Some(0.0));
    }
    let phi = |s: f64| -> Result<f64> { Ok((n + 2.0) * profile_f(n + 2.0, s, cfg)? + s) };
    let mut hi = 1.0;
    if phi(hi)? <= 0.0 {
        return Err(Error::Bracket {
            reason: format!("pole denominator non-positive at s = {hi} for n = {n}"),
        });
    }
    let mut lo = -1.0;
    loop {
        if phi(lo)? <= 0.0 {
            break;
        }
        hi = lo;
        lo *= 2.0;
        if lo < -64.0 {
            return Ok(None);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 * (1.0 + hi.abs()) {
            break;
        }
    }
    Ok(Some(hi))
}

/// Gaussian moment `M_{n,2p}(s) = (2/s)^p Γ((n+2p)/2) / Γ(n/2)` for `s > 0`.
pub fn gaussian_moment(n: f64, p: u32, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::param("s", "Gaussian moments need s > 0"));
    }
    if !(n > 0.0) {
        return Err(Error::param("n", "must be positive"));
    }
    let pf = p as f64;
    Ok((2.0 / s).powf(pf) * (ln_gamma(0.5 * (n + 2.0 * pf)) - ln_gamma(0.5 * n)).exp())
}

/// `R^{(2p)}_n(s) = Σ_{n,2p}(s) / Σ_{n,2}(s)^p`.
pub fn universal_ratio(n: f64, p: u32, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if p == 0 {
        return Err(Error::param("p", "must be at least 1"));
    }
    if !(n > 0.0) {
        return Err(Error::param("n", "must be positive"));
    }
    let pf = p as f64;
    let (l2p, _) = log_integral_i(2.0 * pf + n - 1.0, s, cfg)?;
    let (l2, _) = log_integral_i(n + 1.0, s, cfg)?;
    let (l0, _) = log_integral_i(n - 1.0, s, cfg)?;
    Ok((l2p - l0 - pf * (l2 - l0)).exp())
}

/// Closed form `R^{(2p)}_n(0) = Γ((n+2p)/4) Γ(n/4)^{p−1} / Γ((n+2)/4)^p`.
pub fn universal_ratio_at_zero(n: f64, p: u32) -> f64 {
    let pf = p as f64;
    (ln_gamma(0.25 * (n + 2.0 * pf)) + (pf - 1.0) * ln_gamma(0.25 * n) - pf * ln_gamma(0.25 * (n + 2.0))).exp()
}

/// `Q = 4 [Γ(3/4)/Γ(1/4)]²`, the reciprocal of the n = 1 kurtosis at s = 0.
pub fn kurtosis_constant() -> f64 {
    4.0 * (gamma(0.75) / gamma(0.25)).powi(2)
}

/// Binder cumulant `U_n(s) = 1 − R^{(4)}_n(s)/3`.
pub fn binder(n: f64, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(1.0 - universal_ratio(n, 2, s, cfg)? / 3.0)
}

/// Renormalized coupling `λ_n(s) = (n+2)/n − R^{(4)}_n(s)`.
pub fn renorm_coupling(n: f64, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
    Ok((n + 2.0) / n - universal_ratio(n, 2, s, cfg)?)
}

/// One row of the profile table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub n: f64,
    pub s: f64,
    pub f: f64,
    pub sigma2: Option<f64>,
    pub sigma4: Option<f64>,
    pub ratio4: Option<f64>,
    pub binder: Option<f64>,
    pub lambda: Option<f64>,
}

/// Evaluates every profile quantity at `(n, s)`; moment columns are `None` for `n ≤ 0`.
pub fn profile_row(n: f64, s: f64, cfg: &QuadratureConfig) -> Result<ProfileRow> {
    let f = profile_f(n, s, cfg)?;
    if n > 0.0 {
        let sigma2 = sigma_moment(n, 2.0, s, cfg)?;
        let sigma4 = sigma_moment(n, 4.0, s, cfg)?;
        let ratio4 = sigma4 / (sigma2 * sigma2);
        Ok(ProfileRow {
            n,
            s,
            f,
            sigma2: Some(sigma2),
            sigma4: Some(sigma4),
            ratio4: Some(ratio4),
            binder: Some(1.0 - ratio4 / 3.0),
            lambda: Some((n + 2.0) / n - ratio4),
        })
    } else {
        Ok(ProfileRow {
            n,
            s,
            f,
            sigma2: None,
            sigma4: None,
            ratio4: None,
            binder: None,
            lambda: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn i_at_zero_matches_gamma_formula() {
        for &k in &[-0.5, 0.0, 0.3, 1.0, 2.0, 3.0, 5.5, 9.0] {
            let q = integral_i(k, 0.0, &cfg()).unwrap().value;
            assert_relative_eq!(q, integral_i_at_zero(k), max_relative = 1e-10);
        }
        assert_relative_eq!(integral_i_at_zero(1.0), PI.sqrt() / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn i_at_large_negative_s_does_not_overflow_in_log() {
        let (l, _) = log_integral_i(2.0, -80.0, &cfg()).unwrap();
        // log of √π |s|^{1/2} e^{s²/4}; the reference value is 1602.76333918554474.
        let asym = 0.5 * PI.ln() + 0.5 * 80f64.ln() + 1600.0;
        assert!((l - asym).abs() < 1e-4, "{l} vs {asym}");
        assert!((l - 1_602.763_339_185_544_7).abs() < 1e-9);
    }

    #[test]
    fn faxen_reduces_to_gamma_at_zero() {
        assert_relative_eq!(faxen(0.5, 0.5, 0.0, &cfg()).unwrap(), PI.sqrt(), max_relative = 1e-10);
        assert_relative_eq!(faxen(0.3, 2.5, 0.0, &cfg()).unwrap(), gamma(2.5), max_relative = 1e-10);
    }

    #[test]
    fn faxen_identity_with_i() {
        let (k, s) = (3.0, 1.7);
        let i = integral_i(k, s, &cfg()).unwrap().value;
        let fi = faxen(0.5, 0.25 * (k + 1.0), -s, &cfg()).unwrap();
        assert_relative_eq!(i, 2f64.powf(0.5 * (k - 3.0)) * fi, max_relative = 1e-9);
    }

    #[test]
    fn f_at_zero_and_minus_two() {
        assert_relative_eq!(
            profile_f(1.0, 0.0, &cfg()).unwrap(),
            gamma(0.75) / (2.0 * gamma(1.25)),
            max_relative = 1e-10
        );
        assert_relative_eq!(profile_f(-2.0, 0.5, &cfg()).unwrap(), 2.0, max_relative = 1e-15);
        assert!(matches!(profile_f(-2.0, -0.5, &cfg()), Err(Error::PoleProximity { .. })));
    }

    #[test]
    fn gaussian_moment_values() {
        assert_relative_eq!(gaussian_moment(1.0, 2, 2.0).unwrap(), 0.75, max_relative = 1e-14);
        assert_relative_eq!(gaussian_moment(3.0, 1, 0.7).unwrap(), 3.0 / 0.7, max_relative = 1e-14);
        assert_eq!(gaussian_moment(2.0, 0, 1.3).unwrap(), 1.0);
    }
}
