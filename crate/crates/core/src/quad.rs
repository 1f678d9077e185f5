//! Adaptive bisection quadrature with fixed-order Gauss–Legendre panels.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::GaussLegendre;

const PANEL_ORDER: usize = 15;

fn panel_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_ORDER))
}

/// How the upper limit of a semi-infinite integral is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailPolicy {
    /// Pick R from a log-concave tail bound so the discarded mass is below `abs_tol/10`.
    Bound,
    /// Integrate up to a fixed R regardless of the integrand.
    Fixed(f64),
}

/// Tolerances and budget for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    pub tail: TailPolicy,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_subdivisions: 2000,
            tail: TailPolicy::Bound,
        }
    }
}

impl QuadratureConfig {
    /// Validates tolerances and budget.
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::param("tolerance", "abs_tol and rel_tol must be positive"));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::param("max_subdivisions", "must be positive"));
        }
        if let TailPolicy::Fixed(r) = self.tail {
            if !(r > 0.0) {
                return Err(Error::param("tail", "fixed cutoff must be positive"));
            }
        }
        Ok(())
    }

    /// Truncation budget for a discarded tail.
    pub fn tail_budget(&self) -> f64 {
        self.abs_tol / 10.0
    }
}

/// A quadrature value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn evaluate_panel<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Panel {
    let rule = panel_rule();
    let m = 0.5 * (a + b);
    let whole = rule.integrate(a, b, &mut *f);
    let halves = rule.integrate(a, m, &mut *f) + rule.integrate(m, b, &mut *f);
    Panel {
        a,
        b,
        value: halves,
        error: (whole - halves).abs(),
    }
}

/// Integrates `f` over `[points[0], points[last]]`, starting from the panels
/// delimited by `points` and bisecting the worst panel until the total error
/// is below `max(abs_tol, rel_tol·|value|)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], cfg: &QuadratureConfig) -> Result<Estimate> {
    cfg.validate()?;
    if points.len() < 2 {
        return Err(Error::param("points", "need at least two breakpoints"));
    }
    let mut panels: Vec<Panel> = points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| evaluate_panel(&mut f, w[0], w[1]))
        .collect();
    if panels.is_empty() {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let mut splits = 0;
    loop {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        let target = cfg.abs_tol.max(cfg.rel_tol * value.abs());
        if !value.is_finite() {
            return Err(Error::Quadrature {
                achieved: f64::INFINITY,
                requested: target,
            });
        }
        if error <= target {
            return Ok(Estimate { value, error });
        }
        if splits >= cfg.max_subdivisions {
            return Err(Error::Quadrature {
                achieved: error,
                requested: target,
            });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("non-empty panel list");
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        if !(m > p.a && m < p.b) {
            // Panel cannot be split further in floating point.
            return Err(Error::Quadrature {
                achieved: error,
                requested: target,
            });
        }
        panels.push(evaluate_panel(&mut f, p.a, m));
        panels.push(evaluate_panel(&mut f, m, p.b));
        splits += 1;
    }
}

/// Finds the upper limit R ≥ `start` of a semi-infinite integral of `e^{h}`
/// such that the tail bound `e^{h(R)}/|h'(R)|` is below `budget`.
///
/// Valid for log-concave tails: once `h` is decreasing and concave beyond
/// `start`, `∫_R^∞ e^h ≤ e^{h(R)}/|h'(R)|`.
pub fn tail_cutoff<H, D>(h: H, dh: D, start: f64, budget: f64) -> Result<f64>
where
    H: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut r = start.max(1e-3);
    let log_budget = budget.ln();
    for _ in 0..200 {
        let slope = dh(r);
        if slope < 0.0 && h(r) - (-slope).ln() <= log_budget {
            return Ok(r);
        }
        r *= 1.25;
    }
    Err(Error::Quadrature {
        achieved: f64::INFINITY,
        requested: budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrates_smooth_function() {
        let cfg = QuadratureConfig::default();
        let e = integrate(|x| (-x * x).exp(), &[0.0, 8.0], &cfg).unwrap();
        assert_relative_eq!(e.value, std::f64::consts::PI.sqrt() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn reports_budget_exhaustion() {
        let cfg = QuadratureConfig {
            max_subdivisions: 2,
            ..Default::default()
        };
        let r = integrate(|x| (50.0 * x).sin().abs(), &[0.0, 10.0], &cfg);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn tail_cutoff_bounds_gaussian_tail() {
        let r = tail_cutoff(|x| -x * x, |x| -2.0 * x, 1.0, 1e-14).unwrap();
        let tail = crate::special::erfc(r) * std::f64::consts::PI.sqrt() / 2.0;
        assert!(tail < 1e-14);
    }
}
