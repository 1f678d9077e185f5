//! Walks on the complete graph `K_N`: the exact self-avoiding-walk
//! susceptibility and the weakly self-avoiding walk through its effective
//! potential.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::f0_closed_form;
use crate::quad::{integrate, tail_cutoff, QuadratureConfig};
use crate::special::bessel_i_scaled;

/// `log χ_N(z)` for `χ_N(z) = Σ_{n<N} z^n (N−1)!/(N−1−n)!`, `z > 0`.
pub fn saw_log_chi_exact(n_sites: usize, z: f64) -> Result<f64> {
    if n_sites < 1 {
        return Err(Error::param("N", "must be at least 1"));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::param("z", "must be positive and finite"));
    }
    let mut log_t = 0.0f64;
    let mut terms = Vec::with_capacity(n_sites);
    terms.push(0.0);
    let lz = z.ln();
    for n in 0..n_sites - 1 {
        log_t += lz + ((n_sites - n - 1) as f64).ln();
        terms.push(log_t);
    }
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|&x| (x - top).exp()).sum();
    Ok(top + sum.ln())
}

/// Exact SAW susceptibility on `K_N` by `t_{n+1} = t_n z (N−n−1)`; falls back
/// to the log domain when the direct sum overflows.
pub fn saw_chi_exact(n_sites: usize, z: f64) -> Result<f64> {
    if n_sites < 1 {
        return Err(Error::param("N", "must be at least 1"));
    }
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::param("z", "must be nonnegative and finite"));
    }
    let mut t = 1.0f64;
    let mut sum = 1.0f64;
    for n in 0..n_sites - 1 {
        t *= z * (n_sites - n - 1) as f64;
        sum += t;
        if !sum.is_finite() {
            break;
        }
        if t < 1e-18 * sum {
            break;
        }
    }
    if sum.is_finite() {
        return Ok(sum);
    }
    let l = saw_log_chi_exact(n_sites, z)?;
    if l >= f64::MAX.ln() {
        return Err(Error::param("z", "susceptibility overflows f64; use saw_log_chi_exact"));
    }
    Ok(l.exp())
}

/// `χ_N(N^{−1}(1 − s(2N)^{−1/2})) / ((2N)^{1/2} f_0(s))`.
pub fn saw_window_ratio(n_sites: usize, s: f64) -> Result<f64> {
    if n_sites < 10 {
        return Err(Error::param("N", "window ratio needs N >= 10"));
    }
    let nf = n_sites as f64;
    let z = (1.0 - s / (2.0 * nf).sqrt()) / nf;
    Ok(saw_chi_exact(n_sites, z)? / ((2.0 * nf).sqrt() * f0_closed_form(s)))
}

/// Weakly self-avoiding walk parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsawParams {
    pub g: f64,
    pub nu: f64,
}

impl WsawParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) || !self.g.is_finite() {
            return Err(Error::param("g", "must be positive"));
        }
        if !self.nu.is_finite() {
            return Err(Error::param("nu", "must be finite"));
        }
        Ok(())
    }
}

/// Effective potential and its ingredients at one `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffPotentialEval {
    pub t: f64,
    pub v: f64,
    pub dv: f64,
    pub potential: f64,
    pub derivative: f64,
}

/// Upper limit of the `s`-integrals: the log-integrand is bounded by
/// `−gs² − (ν+1)s + 2√(st) + log(1+t)`.
fn s_cutoff(t: f64, p: &WsawParams, cfg: &QuadratureConfig) -> Result<f64> {
    let b = p.nu + 1.0;
    let lead = (1.0 + t).ln();
    tail_cutoff(
        |s| -p.g * s * s - b * s + 2.0 * (s * t).sqrt() + lead,
        |s| -2.0 * p.g * s - b + (t / s.max(1e-300)).sqrt(),
        1.0,
        cfg.tail_budget(),
    )
}

fn s_breakpoints(upper: f64) -> Vec<f64> {
    let mut pts = vec![0.0];
    pts.extend([0.125, 0.5, 1.0, 2.0, 4.0, 8.0].into_iter().filter(|&x| x < upper));
    pts.push(upper);
    pts
}

/// `v(t)` and `v′(t) = ∫ e^{−gs²−(ν+1)s} Ĩ₀(2√(st)) ds`.
pub fn wsaw_v(t: f64, p: &WsawParams, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
    p.validate()?;
    if !(t >= 0.0) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    let b = p.nu + 1.0;
    let upper = s_cutoff(t, p, cfg)?;
    let pts = s_breakpoints(upper);
    let weight = |s: f64| -p.g * s * s - b * s;
    // √(t/s) Ĩ₁(x) = t · 2Ĩ₁(x)/x with x = 2√(st).
    let v = if t == 0.0 {
        0.0
    } else {
        integrate(
            |s| {
                let x = 2.0 * (s * t).sqrt();
                let ratio = if x < 1e-8 { 1.0 } else { 2.0 * bessel_i_scaled(1.0, x) / x };
                t * ratio * (weight(s) + x).exp()
            },
            &pts,
            cfg,
        )?
        .value
    };
    let dv = integrate(
        |s| {
            let x = 2.0 * (s * t).sqrt();
            bessel_i_scaled(0.0, x) * (weight(s) + x).exp()
        },
        &pts,
        cfg,
    )?
    .value;
    Ok((v, dv))
}

/// `(V(t), V′(t))` with `V = t − log(1+v)`.
pub fn wsaw_effective_potential(t: f64, p: &WsawParams, cfg: &QuadratureConfig) -> Result<EffPotentialEval> {
    let (v, dv) = wsaw_v(t, p, cfg)?;
    if !(1.0 + v > 0.0) {
        return Err(Error::param("nu", "1 + v(t) must stay positive"));
    }
    Ok(EffPotentialEval {
        t,
        v,
        dv,
        potential: t - v.ln_1p(),
        derivative: 1.0 - dv / (1.0 + v),
    })
}

/// `V′(0) = 1 − ∫₀^∞ e^{−gs²−(ν+1)s} ds`.
pub fn wsaw_slope_at_zero(p: &WsawParams, cfg: &QuadratureConfig) -> Result<f64> {
    p.validate()?;
    let upper = s_cutoff(0.0, p, cfg)?;
    let b = p.nu + 1.0;
    let m0 = integrate(|s| (-p.g * s * s - b * s).exp(), &s_breakpoints(upper), cfg)?.value;
    Ok(1.0 - m0)
}

/// Critical `ν_c(g)` with `V′_c(0) = 0`, by bisection.
pub fn wsaw_critical_nu(g: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let slope = |nu: f64| wsaw_slope_at_zero(&WsawParams { g, nu }, cfg);
    // V′(0) increases with ν and is positive at ν = 0.
    let mut hi = 0.0;
    if slope(hi)? <= 0.0 {
        return Err(Error::Bracket {
            reason: "V'(0) is not positive at nu = 0".into(),
        });
    }
    let mut lo = -1.0;
    let mut steps = 0;
    while slope(lo)? > 0.0 {
        hi = lo;
        lo *= 2.0;
        steps += 1;
        if steps > 60 {
            return Err(Error::Bracket {
                reason: "no sign change of V'(0) in the scan range".into(),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let v = slope(mid)?;
        if v.abs() < 1e-14 {
            return Ok(mid);
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Step for the difference quotients of `V′`.
pub const WSAW_FD_STEP: f64 = 1e-4;

/// Critical point and the window constants derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsawConstants {
    pub g: f64,
    pub nu_c: f64,
    /// `V″_c(0)`.
    pub curvature: f64,
    /// `V̇′_c(0) = ∂_ν V′(0)` at `ν_c`.
    pub mass_slope: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// `ν_c`, `V″_c(0)` and `V̇′_c(0)` by Richardson-extrapolated differences;
/// `λ₁ = 1/(V″_c(0)/2)^{1/2}`, `λ₂ = V̇′_c(0)/(V″_c(0)/2)^{1/2}`.
pub fn wsaw_constants(g: f64, cfg: &QuadratureConfig) -> Result<WsawConstants> {
    let nu_c = wsaw_critical_nu(g, cfg)?;
    let p = WsawParams { g, nu: nu_c };
    let d0 = wsaw_slope_at_zero(&p, cfg)?;
    let h = WSAW_FD_STEP;
    // V is defined for t ≥ 0 only, so the t-derivative is one-sided.
    let dt = |step: f64| -> Result<f64> { Ok((wsaw_effective_potential(step, &p, cfg)?.derivative - d0) / step) };
    let curvature = 2.0 * dt(0.5 * h)? - dt(h)?;
    if !(curvature > 0.0) {
        return Err(Error::Bracket {
            reason: format!("V''_c(0) = {curvature} is not positive"),
        });
    }
    let dnu = |step: f64| -> Result<f64> {
        let up = wsaw_slope_at_zero(&WsawParams { g, nu: nu_c + step }, cfg)?;
        let dn = wsaw_slope_at_zero(&WsawParams { g, nu: nu_c - step }, cfg)?;
        Ok((up - dn) / (2.0 * step))
    };
    let mass_slope = (4.0 * dnu(0.5 * h)? - dnu(h)?) / 3.0;
    let root_p = (0.5 * curvature).sqrt();
    Ok(WsawConstants {
        g,
        nu_c,
        curvature,
        mass_slope,
        lambda1: 1.0 / root_p,
        lambda2: mass_slope / root_p,
    })
}

/// `G₀₁(ν) = ∫₀^∞ e^{−NV(t)} (1 − V′(t))² dt`.
pub fn wsaw_g01(n_sites: usize, p: &WsawParams, cfg: &QuadratureConfig) -> Result<f64> {
    let nf = n_sites as f64;
    let inner = QuadratureConfig {
        abs_tol: cfg.abs_tol.min(1e-13),
        ..*cfg
    };
    let eval = |t: f64| wsaw_effective_potential(t, p, &inner);
    // Upper limit: NV(t) large and increasing.
    let unit = nf.powf(-0.5);
    let mut upper = 8.0 * unit;
    let mut grow = 0;
    loop {
        let e = eval(upper)?;
        if nf * e.potential > 60.0 && e.derivative > 0.0 {
            break;
        }
        upper *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::Quadrature {
                achieved: f64::INFINITY,
                requested: cfg.abs_tol,
            });
        }
    }
    let mut pts: Vec<f64> = vec![0.0];
    pts.extend([0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|k| k * unit).filter(|&x| x < upper));
    pts.push(upper);
    let mut failure = None;
    let outer = QuadratureConfig {
        abs_tol: 1e-14 * unit,
        rel_tol: cfg.rel_tol.max(1e-9),
        ..*cfg
    };
    let est = integrate(
        |t| match eval(t) {
            Ok(e) => (-nf * e.potential).exp() * (1.0 - e.derivative).powi(2),
            Err(err) => {
                failure.get_or_insert(err);
                f64::NAN
            }
        },
        &pts,
        &outer,
    );
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(est?.value)
}

/// Window comparison for the weakly self-avoiding walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsawWindow {
    #[serde(rename = "N")]
    pub n_sites: usize,
    pub s: f64,
    pub g01: f64,
    pub prediction: f64,
    pub ratio: f64,
    pub constants: WsawConstants,
}

/// `N·G₀₁(ν_c + sN^{−1/2}) / (λ₁ √N f₀(λ₂ s))`.
pub fn wsaw_window_ratio(n_sites: usize, s: f64, g: f64, cfg: &QuadratureConfig) -> Result<WsawWindow> {
    let constants = wsaw_constants(g, cfg)?;
    wsaw_window_ratio_with(n_sites, s, &constants, cfg)
}

/// As [`wsaw_window_ratio`] with precomputed constants.
pub fn wsaw_window_ratio_with(n_sites: usize, s: f64, c: &WsawConstants, cfg: &QuadratureConfig) -> Result<WsawWindow> {
    if n_sites < 1000 {
        return Err(Error::param("N", "window ratio needs N >= 1000"));
    }
    let nf = n_sites as f64;
    let p = WsawParams {
        g: c.g,
        nu: c.nu_c + s / nf.sqrt(),
    };
    let g01 = wsaw_g01(n_sites, &p, cfg)?;
    let prediction = c.lambda1 * nf.sqrt() * f0_closed_form(c.lambda2 * s);
    Ok(WsawWindow {
        n_sites,
        s,
        g01,
        prediction,
        ratio: nf * g01 / prediction,
        constants: *c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn small_graphs() {
        assert_eq!(saw_chi_exact(3, 1.0).unwrap(), 5.0);
        assert_eq!(saw_chi_exact(1, 0.3).unwrap(), 1.0);
        assert_eq!(saw_chi_exact(4, 0.0).unwrap(), 1.0);
        // K_4 at z = 1: 1 + 3 + 6 + 6.
        assert_eq!(saw_chi_exact(4, 1.0).unwrap(), 16.0);
    }

    #[test]
    fn log_domain_agrees() {
        let direct = saw_chi_exact(30, 0.5).unwrap();
        assert_relative_eq!(saw_log_chi_exact(30, 0.5).unwrap().exp(), direct, max_relative = 1e-12);
    }

    #[test]
    fn potential_vanishes_at_origin() {
        let cfg = QuadratureConfig::default();
        let e = wsaw_effective_potential(0.0, &WsawParams { g: 1.0, nu: -1.2 }, &cfg).unwrap();
        assert_eq!(e.potential, 0.0);
    }
}
