//! Second-order perturbative RG flow of the couplings `(g_j, ν_j)`.
//!
//! The map is
//!
//! ```text
//! g_{j+1} = g_j − β_j g_j²
//! ν_{j+1} = (1 − γ̂ β_j g_j) ν_j + η_j g_j − ξ_j g_j²
//! ```
//!
//! with explicit mass-dependent coefficients. On top of it this module locates
//! the critical point by nested-interval bisection, propagates first
//! derivatives with respect to `ν₀` and the mass `a`, and solves for the
//! effective critical points, renormalized masses and window scales.
//!
//! Internally the flow is carried in the rescaled variable `μ_j = L^{2j} ν_j`,
//! which stays of order `g` on the critical trajectory and never underflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::BoundaryCondition;
use crate::profiles::sigma_moment;
use crate::quad::QuadratureConfig;

/// Parameters of a perturbative flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub g0: f64,
    /// Mass used by [`flow`] when no explicit mass is given.
    pub a: f64,
    /// Reference mass `ã ≥ 0` defining the bands.
    pub tilde_a: f64,
    /// The constant `ξ₀⁰` in `ξ_j`.
    pub xi0: f64,
    /// Scale horizon used as a proxy for `j = ∞`.
    pub jmax: usize,
}

impl FlowParams {
    /// Parameters with `a = ã = ξ₀⁰ = 0` and the default horizon.
    pub fn new(d: usize, n: usize, l: usize, g0: f64) -> Result<Self> {
        let p = FlowParams {
            d,
            n,
            l,
            g0,
            a: 0.0,
            tilde_a: 0.0,
            xi0: 0.0,
            jmax: Self::default_jmax(d),
        };
        p.validate()?;
        Ok(p)
    }

    /// 10⁵ scales for `d = 4`, 400 for `d > 4`.
    pub fn default_jmax(d: usize) -> usize {
        if d == 4 {
            100_000
        } else {
            400
        }
    }

    pub fn with_jmax(mut self, jmax: usize) -> Self {
        self.jmax = jmax;
        self
    }

    pub fn with_xi0(mut self, xi0: f64) -> Self {
        self.xi0 = xi0;
        self
    }

    pub fn with_mass(mut self, a: f64) -> Self {
        self.a = a;
        self
    }

    pub fn with_tilde_a(mut self, tilde_a: f64) -> Self {
        self.tilde_a = tilde_a;
        self
    }

    /// Checks `d ≥ 4`, `n ≥ 1`, `L ≥ 2`, `g₀ > 0`, `ã ≥ 0`, `jmax ≥ 1`.
    pub fn validate(&self) -> Result<()> {
        if self.d < 4 {
            return Err(Error::param("d", "the flow is defined for d >= 4"));
        }
        if self.n < 1 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if self.l < 2 {
            return Err(Error::param("L", "must be at least 2"));
        }
        if !(self.g0 > 0.0) || !self.g0.is_finite() {
            return Err(Error::param("g0", "must be positive and finite"));
        }
        if !(self.tilde_a >= 0.0) {
            return Err(Error::param("tilde_a", "must be nonnegative"));
        }
        if !self.xi0.is_finite() || !self.a.is_finite() {
            return Err(Error::param("a", "mass and xi0 must be finite"));
        }
        if self.jmax < 1 {
            return Err(Error::param("jmax", "must be at least 1"));
        }
        Ok(())
    }

    pub fn lf(&self) -> f64 {
        self.l as f64
    }

    /// `γ̂ = (n+2)/(n+8)`.
    pub fn gamma_hat(&self) -> f64 {
        (self.n as f64 + 2.0) / (self.n as f64 + 8.0)
    }

    /// `θ̂ = 1/2 − γ̂`.
    pub fn theta_hat(&self) -> f64 {
        0.5 - self.gamma_hat()
    }

    /// `B = (n+8)(1 − L^{−d})`.
    pub fn b_const(&self) -> f64 {
        (self.n as f64 + 8.0) * (1.0 - self.lf().powi(-(self.d as i32)))
    }

    /// `ρ_j = L^{−(d−4)j}`.
    pub fn rho(&self, j: usize) -> f64 {
        self.lf().powf(-((self.d - 4) as f64) * j as f64)
    }

    /// First scale at which the reference sequence `g̃_j` violates
    /// `g̃_{j+1} ∈ [g̃_j/2, g̃_j]`, or `None` if it holds up to `jmax`.
    pub fn halving_violation(&self) -> Result<Option<usize>> {
        let sched = Schedule::build(self, self.tilde_a, self.jmax)?;
        Ok((0..self.jmax).find(|&j| {
            let (g, gn) = (sched.g[j], sched.g[j + 1]);
            !(gn >= 0.5 * g && gn <= g)
        }))
    }
}

/// Flow coefficients at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta: f64,
    pub eta: f64,
    pub xi: f64,
    /// `L^{2j} η_j`, finite for all `j`.
    pub eta_scaled: f64,
    /// `L^{2j} ξ_j`.
    pub xi_scaled: f64,
    /// `(1 + a L^{2j})^{−1}`.
    pub damp: f64,
}

/// `β_j, η_j, ξ_j` at scale `j` and mass `a`.
pub fn coefficients(j: usize, a: f64, p: &FlowParams) -> Result<Coefficients> {
    let l = p.lf();
    let d = p.d as f64;
    let jf = j as f64;
    let damp = if a == 0.0 {
        1.0
    } else {
        let t = 1.0 + a * l.powf(2.0 * jf);
        if !(t > 0.0) {
            return Err(Error::SingularMass {
                a,
                reason: format!("1 + a L^(2j) <= 0 at j = {j}"),
            });
        }
        1.0 / t
    };
    let c = 1.0 - l.powi(-(p.d as i32));
    let nf = p.n as f64;
    let beta = (nf + 8.0) * c * damp * damp * l.powf(-(d - 4.0) * jf);
    let eta_scaled = (nf + 2.0) * c * damp * l.powf(-(d - 4.0) * jf);
    let xi_scaled = p.xi0 * damp.powi(3) * l.powf(-(2.0 * d - 8.0) * jf);
    let down = l.powf(-2.0 * jf);
    Ok(Coefficients {
        beta,
        eta: eta_scaled * down,
        xi: xi_scaled * down,
        eta_scaled,
        xi_scaled,
        damp,
    })
}

/// Derivatives of `(g_j, ν_j)` with respect to `ν₀` (prime) and `a` (dot).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub g_prime: f64,
    pub nu_prime: f64,
    /// `L^{−2j} ∂g_j/∂a`; the unscaled derivative grows like `L^{2j}`.
    pub g_dot_scaled: f64,
    pub nu_dot: f64,
}

/// Running couplings at scale `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingState {
    pub j: usize,
    pub g: f64,
    pub nu: f64,
    /// `μ_j = L^{2j} ν_j`, carried by its own recursion.
    pub mu: f64,
    pub deriv: Option<Derivatives>,
}

impl CouplingState {
    /// Initial state `(g₀, ν₀)` with the derivative block `ν′ = 1`, others zero.
    pub fn initial(g0: f64, nu0: f64, with_derivatives: bool) -> Self {
        CouplingState {
            j: 0,
            g: g0,
            nu: nu0,
            mu: nu0,
            deriv: with_derivatives.then_some(Derivatives {
                g_prime: 0.0,
                nu_prime: 1.0,
                g_dot_scaled: 0.0,
                nu_dot: 0.0,
            }),
        }
    }

    /// `∂g_j/∂a`.
    pub fn g_dot(&self, l: f64) -> Option<f64> {
        self.deriv.map(|d| d.g_dot_scaled * l.powf(2.0 * self.j as f64))
    }
}

/// One step of the perturbative map, advancing the derivative block when present.
pub fn pt_step(state: &CouplingState, a: f64, p: &FlowParams) -> Result<CouplingState> {
    let c = coefficients(state.j, a, p)?;
    let l2 = p.lf() * p.lf();
    let gh = p.gamma_hat();
    let g = state.g;
    let contraction = 1.0 - gh * c.beta * g;
    let g_next = g - c.beta * g * g;
    let nu_next = contraction * state.nu + c.eta * g - c.xi * g * g;
    let mu_next = l2 * (contraction * state.mu + c.eta_scaled * g - c.xi_scaled * g * g);
    let deriv = state.deriv.map(|dv| {
        let nu = state.nu;
        let gp = dv.g_prime;
        let nu_prime = contraction * dv.nu_prime - gh * c.beta * gp * nu + c.eta * gp - 2.0 * c.xi * g * gp;
        let g_prime = gp * (1.0 - 2.0 * c.beta * g);
        let gd = dv.g_dot_scaled;
        // β̇ν = −2β·damp·μ, ġν = ĝμ, η̇g = −(L^{2j}η)·damp·g, ξ̇ = −3(L^{2j}ξ)·damp.
        let beta_dot_nu = product(-2.0 * c.beta * c.damp, state.mu);
        let g_dot_nu = product(gd, state.mu);
        let eta_dot_g = -c.eta_scaled * c.damp * g;
        let xi_dot = -3.0 * c.xi_scaled * c.damp;
        let nu_dot = contraction * dv.nu_dot + eta_dot_g + c.eta_scaled * gd
            - gh * (beta_dot_nu * g + c.beta * g_dot_nu)
            - xi_dot * g * g
            - 2.0 * c.xi_scaled * g * gd;
        let g_dot_scaled = (gd * (1.0 - 2.0 * c.beta * g) + 2.0 * c.beta * g * g * c.damp) / l2;
        Derivatives {
            g_prime,
            nu_prime,
            g_dot_scaled,
            nu_dot,
        }
    });
    Ok(CouplingState {
        j: state.j + 1,
        g: g_next,
        nu: nu_next,
        mu: mu_next,
        deriv,
    })
}

/// `x·y` with `0·∞ = 0`; an escaped `μ` multiplies coefficients that vanish.
fn product(x: f64, y: f64) -> f64 {
    if x == 0.0 || y == 0.0 {
        0.0
    } else {
        x * y
    }
}

/// Full trajectory `j = 0..=jmax` from `(g₀, ν₀)` at mass `a`, with derivatives.
pub fn flow(nu0: f64, a: f64, p: &FlowParams, jmax: usize) -> Result<Vec<CouplingState>> {
    p.validate()?;
    let mut out = Vec::with_capacity(jmax + 1);
    let mut s = CouplingState::initial(p.g0, nu0, true);
    out.push(s);
    for _ in 0..jmax {
        s = pt_step(&s, a, p)?;
        out.push(s);
    }
    Ok(out)
}

/// Mass scale `j_a = max{j : L^{2j} a ≤ 1}`; `None` stands for `+∞` (`a ≤ 0`).
pub fn mass_scale(a: f64, l: usize) -> Option<usize> {
    if a <= 0.0 {
        return None;
    }
    if a > 1.0 {
        return Some(0);
    }
    let l2 = (l * l) as f64;
    let mut j = 0usize;
    let mut pow = 1.0f64;
    while pow * l2 * a <= 1.0 {
        pow *= l2;
        j += 1;
    }
    Some(j)
}

/// Decay factor `ϑ_j(ã)`: `2^{−(j−j_ã)₊}` for `ã < 1`, `ã^{−1} 2^{−j}` for `ã ≥ 1`.
pub fn vartheta(j: usize, tilde_a: f64, l: usize) -> f64 {
    if tilde_a >= 1.0 {
        return 2f64.powf(-(j as f64)) / tilde_a;
    }
    match mass_scale(tilde_a, l) {
        None => 1.0,
        Some(ja) => 2f64.powf(-(j.saturating_sub(ja) as f64)),
    }
}

/// Mass interval `𝕀_j(ã)`: `(−½L^{−2j}, ½L^{−2j})` for `ã = 0`, `(ã/2, 2ã)` otherwise.
pub fn mass_interval(j: usize, tilde_a: f64, l: usize) -> (f64, f64) {
    if tilde_a == 0.0 {
        let h = 0.5 * (l as f64).powf(-2.0 * j as f64);
        (-h, h)
    } else {
        (0.5 * tilde_a, 2.0 * tilde_a)
    }
}

/// Precomputed coefficients, reference couplings and bands for one mass.
#[derive(Debug, Clone)]
struct Schedule {
    g: Vec<f64>,
    beta: Vec<f64>,
    eta_scaled: Vec<f64>,
    xi_scaled: Vec<f64>,
    /// Band half-width in `μ`: `6(n+2) ϑ_j g̃_j ρ_j`.
    band: Vec<f64>,
}

impl Schedule {
    /// Coefficients at mass `a`; bands use the reference sequence at `ã = tilde_a`.
    fn build(p: &FlowParams, a: f64, jmax: usize) -> Result<Self> {
        Self::build_with_reference(p, a, p.tilde_a, jmax)
    }

    fn build_with_reference(p: &FlowParams, a: f64, tilde_a: f64, jmax: usize) -> Result<Self> {
        let mut g = Vec::with_capacity(jmax + 1);
        let mut beta = Vec::with_capacity(jmax);
        let mut eta_scaled = Vec::with_capacity(jmax);
        let mut xi_scaled = Vec::with_capacity(jmax);
        let mut gj = p.g0;
        g.push(gj);
        for j in 0..jmax {
            let c = coefficients(j, a, p)?;
            beta.push(c.beta);
            eta_scaled.push(c.eta_scaled);
            xi_scaled.push(c.xi_scaled);
            gj -= c.beta * gj * gj;
            g.push(gj);
        }
        let reference = if tilde_a == a {
            g.clone()
        } else {
            let mut r = Vec::with_capacity(jmax + 1);
            let mut gt = p.g0;
            r.push(gt);
            for j in 0..jmax {
                gt -= coefficients(j, tilde_a, p)?.beta * gt * gt;
                r.push(gt);
            }
            r
        };
        let k = 6.0 * (p.n as f64 + 2.0);
        let band = (0..=jmax).map(|j| k * vartheta(j, tilde_a, p.l) * reference[j] * p.rho(j)).collect();
        Ok(Schedule {
            g,
            beta,
            eta_scaled,
            xi_scaled,
            band,
        })
    }

    fn len(&self) -> usize {
        self.beta.len()
    }

    /// `μ` after `steps` scales from `ν₀`.
    fn mu_at(&self, p: &FlowParams, nu0: f64, steps: usize) -> f64 {
        let l2 = p.lf() * p.lf();
        let gh = p.gamma_hat();
        let mut mu = nu0;
        for j in 0..steps {
            let g = self.g[j];
            mu = l2 * ((1.0 - gh * self.beta[j] * g) * mu + self.eta_scaled[j] * g - self.xi_scaled[j] * g * g);
        }
        mu
    }

    /// Runs the `μ` flow until it leaves the band or reaches the horizon.
    fn classify(&self, p: &FlowParams, nu0: f64) -> Fate {
        let l2 = p.lf() * p.lf();
        let gh = p.gamma_hat();
        let mut mu = nu0;
        for j in 0..=self.len() {
            if mu > self.band[j] {
                return Fate::Above(j);
            }
            if mu < -self.band[j] {
                return Fate::Below(j);
            }
            if j == self.len() {
                break;
            }
            let g = self.g[j];
            mu = l2 * ((1.0 - gh * self.beta[j] * g) * mu + self.eta_scaled[j] * g - self.xi_scaled[j] * g * g);
        }
        Fate::Inside(mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Fate {
    Above(usize),
    Below(usize),
    Inside(f64),
}

impl Fate {
    fn is_high(&self) -> bool {
        match *self {
            Fate::Above(_) => true,
            Fate::Below(_) => false,
            Fate::Inside(mu) => mu > 0.0,
        }
    }
}

/// One point of a recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub j: usize,
    pub g: f64,
    pub nu: f64,
    pub mu: f64,
    pub dnu_dnu0: f64,
    pub dnu_da: f64,
    pub in_window: bool,
}

/// Result of the critical-point search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub nu_c: f64,
    /// Final bracket width.
    pub width: f64,
    pub iterations: usize,
    /// Last scale at which the trajectory from `nu_c` is inside its band.
    pub resolved_scale: usize,
    pub trace: Vec<TracePoint>,
}

/// Relative bracket tolerance of the critical-point bisection.
pub const BISECTION_REL_TOL: f64 = 1e-13;
/// Iteration cap of the critical-point bisection.
pub const BISECTION_MAX_ITER: usize = 200;

/// `ν_c(a)` by nested-interval bisection on `ν₀` over `I_0 = J_0`, with bands
/// taken at `ã = a` (`a ≥ 0`).
pub fn bleher_sinai_critical(p: &FlowParams, a: f64, jmax: usize) -> Result<CriticalPoint> {
    p.validate()?;
    if !(a >= 0.0) {
        return Err(Error::param("a", "the critical point is defined for a >= 0"));
    }
    let (sched, nu_c, width, iterations) = critical_search(p, a, jmax)?;
    let resolved_scale = match sched.classify(p, nu_c) {
        Fate::Above(j) | Fate::Below(j) => j.saturating_sub(1),
        Fate::Inside(_) => sched.len(),
    };
    let steps = resolved_scale.min(jmax);
    let states = flow(nu_c, a, p, steps)?;
    let trace = states
        .iter()
        .map(|s| {
            let dv = s.deriv.expect("flow records derivatives");
            TracePoint {
                j: s.j,
                g: s.g,
                nu: s.nu,
                mu: s.mu,
                dnu_dnu0: dv.nu_prime,
                dnu_da: dv.nu_dot,
                in_window: s.mu.abs() <= sched.band[s.j],
            }
        })
        .collect();
    Ok(CriticalPoint {
        nu_c,
        width,
        iterations,
        resolved_scale,
        trace,
    })
}

/// Initial horizon of the critical-point search; trajectories from a
/// floating-point `ν₀` leave their band long before it.
const SEARCH_HORIZON: usize = 256;

/// Bisection with a horizon grown geometrically up to `jmax` whenever some
/// trajectory survives to the current horizon.
fn critical_search(p: &FlowParams, a: f64, jmax: usize) -> Result<(Schedule, f64, f64, usize)> {
    let mut horizon = jmax.min(SEARCH_HORIZON);
    loop {
        let sched = Schedule::build_with_reference(p, a, a, horizon)?;
        let (nu, width, it, survived) = bisect_schedule(&sched, p)?;
        if !survived || horizon == jmax {
            return Ok((sched, nu, width, it));
        }
        horizon = jmax.min(horizon * 4);
    }
}

fn bisect_schedule(sched: &Schedule, p: &FlowParams) -> Result<(f64, f64, usize, bool)> {
    // Monotone bisection needs g_j > 0 and a contracting linear part.
    let gh = p.gamma_hat();
    if let Some(j) = (0..sched.len()).find(|&j| !(gh * sched.beta[j] * sched.g[j] < 1.0) || !(sched.g[j + 1] > 0.0)) {
        return Err(Error::FlowEscape { scale: j });
    }
    let inner = sched.band[0] * (1.0 - 1e-9);
    let escape_scale = |f: Fate| match f {
        Fate::Above(j) | Fate::Below(j) => j,
        Fate::Inside(_) => sched.len(),
    };
    let lo_fate = sched.classify(p, -inner);
    if lo_fate.is_high() {
        return Err(Error::FlowEscape {
            scale: escape_scale(lo_fate),
        });
    }
    let hi_fate = sched.classify(p, inner);
    if !hi_fate.is_high() {
        return Err(Error::FlowEscape {
            scale: escape_scale(hi_fate),
        });
    }
    let mut lo = -inner;
    let mut hi = inner;
    let mut it = 0;
    let mut survived = false;
    while it < BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let fate = sched.classify(p, mid);
        survived |= matches!(fate, Fate::Inside(_));
        if fate.is_high() {
            hi = mid;
        } else {
            lo = mid;
        }
        it += 1;
        if hi - lo <= BISECTION_REL_TOL * lo.abs().max(hi.abs()) {
            break;
        }
    }
    Ok((0.5 * (lo + hi), hi - lo, it, survived))
}

/// `ν_c(a)` with the default horizon.
pub fn nu_c(p: &FlowParams, a: f64) -> Result<f64> {
    Ok(critical_search(p, a, p.jmax)?.1)
}

/// `ν_N` reached from `(ν₀, a)`.
pub fn nu_at_scale(p: &FlowParams, nu0: f64, a: f64, n_scales: usize) -> Result<f64> {
    let sched = Schedule::build_with_reference(p, a, 0.0, n_scales)?;
    Ok(sched.mu_at(p, nu0, n_scales) * p.lf().powf(-2.0 * n_scales as f64))
}

/// `δ(a) = ν_{0,N}(a) − ν_c(0)`, the root of
/// `ν_N|_{(ν_c(0)+δ, a)} = ν_N|_{(ν_c(0), 0)}`.
///
/// The flow is linear in `ν₀`, so Newton's method with the exact `∂ν_N/∂ν₀`
/// converges in one or two steps.
pub fn nu_0n_offset(a: f64, n_scales: usize, p: &FlowParams) -> Result<f64> {
    check_matching_mass(a, n_scales, p)?;
    if a == 0.0 {
        return Ok(0.0);
    }
    let nuc = nu_c(p, 0.0)?;
    let sched_0 = Schedule::build_with_reference(p, 0.0, 0.0, n_scales)?;
    // Δμ_N is affine in δ with slope L^{2N} Π_j (1 − γ̂ β_j(a) g_j(a)).
    let (residual, slope, _) = difference_flow(p, &sched_0, nuc, a, 0.0, n_scales);
    let delta = -residual / slope;
    let (_, _, path) = difference_flow(p, &sched_0, nuc, a, delta, n_scales);
    if let Some(j) = (0..n_scales).find(|&j| path[j].abs() > sched_0.band[j]) {
        return Err(Error::Bracket {
            reason: format!("matched trajectory leaves the band at scale {j}"),
        });
    }
    Ok(delta)
}

/// Propagates `Δμ_j = μ_j(ν_c+δ, a) − μ_j(ν_c, 0)` and `Δg_j` directly, with
/// mass differences of the coefficients formed analytically. Returns
/// `(Δμ_N, ∂Δμ_N/∂δ, path)`.
fn difference_flow(p: &FlowParams, sched_0: &Schedule, nuc: f64, a: f64, delta: f64, n_scales: usize) -> (f64, f64, Vec<f64>) {
    let l = p.lf();
    let l2 = l * l;
    let gh = p.gamma_hat();
    let (mut mu0, mut dmu, mut dg) = (nuc, delta, 0.0);
    let mut slope = 1.0;
    let mut path = Vec::with_capacity(n_scales + 1);
    for j in 0..n_scales {
        path.push(dmu);
        let t = a * l.powf(2.0 * j as f64);
        let damp = 1.0 / (1.0 + t);
        let dm1 = -t / (1.0 + t);
        let (b0, e0, x0, g0) = (sched_0.beta[j], sched_0.eta_scaled[j], sched_0.xi_scaled[j], sched_0.g[j]);
        let db = b0 * dm1 * (1.0 + damp);
        let de = e0 * dm1;
        let dx = x0 * dm1 * (1.0 + damp + damp * damp);
        let ga = g0 + dg;
        let ba = b0 + db;
        let ka = gh * ba * ga;
        let dk = gh * (db * ga + b0 * dg);
        let source = de * ga + e0 * dg - (dx * ga * ga + x0 * (ga + g0) * dg);
        dmu = l2 * ((1.0 - ka) * dmu - dk * mu0 + source);
        slope *= l2 * (1.0 - ka);
        mu0 = l2 * ((1.0 - gh * b0 * g0) * mu0 + e0 * g0 - x0 * g0 * g0);
        dg -= ba * (ga + g0) * dg + db * g0 * g0;
    }
    path.push(dmu);
    (dmu, slope, path)
}

fn check_matching_mass(a: f64, n_scales: usize, p: &FlowParams) -> Result<()> {
    if n_scales < 1 {
        return Err(Error::param("N", "must be at least 1"));
    }
    let (lo, hi) = mass_interval(n_scales - 1, 0.0, p.l);
    if !(a > lo && a < hi) {
        return Err(Error::SingularMass {
            a,
            reason: format!("matching needs a in ({lo}, {hi})"),
        });
    }
    Ok(())
}

/// `ν_{0,N}(a)` for `a ∈ 𝕀_{N−1}(0)`.
pub fn nu_0n(a: f64, n_scales: usize, p: &FlowParams) -> Result<f64> {
    let delta = nu_0n_offset(a, n_scales, p)?;
    Ok(nu_c(p, 0.0)? + delta)
}

/// `∂ν_{0,N}/∂a = −ν̇_N/ν′_N` evaluated on the matched trajectory.
pub fn nu_0n_slope(a: f64, n_scales: usize, p: &FlowParams) -> Result<f64> {
    let nu0 = nu_0n(a, n_scales, p)?;
    let states = flow(nu0, a, p, n_scales)?;
    let dv = states[n_scales].deriv.expect("flow records derivatives");
    Ok(-dv.nu_dot / dv.nu_prime)
}

/// `ν_{1,N}(a)`: `ν_c(a)` for `a ≥ 0`, `ν_{0,N}(a)` for `a ∈ (−½L^{−2(N−1)}, 0)`.
pub fn nu_1n(a: f64, n_scales: usize, p: &FlowParams) -> Result<f64> {
    if a >= 0.0 {
        nu_c(p, a)
    } else {
        nu_0n(a, n_scales, p)
    }
}

/// FBC zero-mode mass `q L^{−2N}`.
pub fn fbc_shift(n_scales: usize, p: &FlowParams) -> f64 {
    let l = p.lf();
    let d = p.d as f64;
    let q = (1.0 - l.powf(-d)) / (1.0 - l.powf(-(d + 2.0)));
    q * l.powf(-2.0 * n_scales as f64)
}

/// Effective critical point: `ν_c(0)` (PBC) or `ν_{0,N}(−qL^{−2N}) − qL^{−2N}` (FBC).
pub fn effective_critical_point(bc: BoundaryCondition, n_scales: usize, p: &FlowParams) -> Result<f64> {
    match bc {
        BoundaryCondition::Periodic => nu_c(p, 0.0),
        BoundaryCondition::Free => {
            let shift = fbc_shift(n_scales, p);
            Ok(nu_0n(-shift, n_scales, p)? - shift)
        }
    }
}

/// `ν_c(0) − ν^F_{c,N}`, computed from the offset to avoid cancellation.
pub fn fbc_critical_shift(n_scales: usize, p: &FlowParams) -> Result<f64> {
    let shift = fbc_shift(n_scales, p);
    Ok(shift - nu_0n_offset(-shift, n_scales, p)?)
}

/// Finite-volume scales and amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    #[serde(rename = "wN")]
    pub w_n: f64,
    #[serde(rename = "vN")]
    pub v_n: f64,
    #[serde(rename = "hN")]
    pub h_n: f64,
    #[serde(rename = "lN")]
    pub l_n: f64,
    #[serde(rename = "pN")]
    pub p_n: f64,
    /// FBC window offset `s_N^F`.
    pub s_fbc: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub g_inf_est: f64,
    #[serde(rename = "A_d_est")]
    pub a_d_est: f64,
}

/// Step of the one-sided difference quotient for `A_d`.
pub const AMPLITUDE_STEP: f64 = 1e-4;

/// `A_4 = (B g / log L²)^{γ̂}` for `d = 4`; for `d > 4`, `A_d = 1 + ν̇_c(0)` by a
/// Richardson-extrapolated difference quotient of `ν_c(a)` at `a = 0⁺`.
pub fn amplitude(p: &FlowParams) -> Result<f64> {
    if p.d == 4 {
        let l2 = (p.lf() * p.lf()).ln();
        return Ok((p.b_const() * p.g0 / l2).powf(p.gamma_hat()));
    }
    let h = AMPLITUDE_STEP;
    let base = nu_c(p, 0.0)?;
    let d1 = (nu_c(p, h)? - base) / h;
    let d2 = (nu_c(p, 0.5 * h)? - base) / (0.5 * h);
    Ok(1.0 + 2.0 * d2 - d1)
}

/// `g_∞` estimated by `g_{jmax}` at `a = 0`.
pub fn g_infinity(p: &FlowParams) -> Result<f64> {
    let sched = Schedule::build_with_reference(p, 0.0, 0.0, p.jmax)?;
    Ok(sched.g[p.jmax])
}

/// Window, FBC-shift, field and plateau scales at volume `L^{dN}`.
pub fn scale_set(n_scales: usize, p: &FlowParams, amplitude_est: f64) -> Result<ScaleSet> {
    if n_scales < 1 {
        return Err(Error::param("N", "must be at least 1"));
    }
    if !(amplitude_est > 0.0) {
        return Err(Error::param("A", "amplitude estimate must be positive"));
    }
    let l = p.lf();
    let d = p.d as f64;
    let nf = n_scales as f64;
    let b = p.b_const();
    let q = fbc_shift(0, p);
    let g_inf = g_infinity(p)?;
    let l_n = l.powf(-nf * (d - 2.0) / 2.0);
    let p_n = l.powf(-nf * d / 2.0);
    let (w_n, v_n, h_n, s_fbc) = if p.d == 4 {
        let gh = p.gamma_hat();
        let log_l2 = (l * l).ln();
        let pref = amplitude_est * log_l2.powf(gh);
        let w = pref * b.powf(-0.5) * nf.powf(-p.theta_hat()) * l.powf(-2.0 * nf);
        let v = pref * nf.powf(gh) * l.powf(-2.0 * nf);
        let h = (b * nf).powf(0.25) * l.powf(-nf);
        (w, v, h, q * (b * nf).sqrt())
    } else {
        let w = amplitude_est * g_inf.sqrt() * l.powf(-nf * d / 2.0);
        let v = amplitude_est * l.powf(-2.0 * nf);
        let h = g_inf.powf(-0.25) * l.powf(-nf * d / 4.0);
        (w, v, h, q * g_inf.powf(-0.5) * l.powf(nf * (d - 4.0) / 2.0))
    };
    Ok(ScaleSet {
        w_n,
        v_n,
        h_n,
        l_n,
        p_n,
        s_fbc,
        b,
        g_inf_est: g_inf,
        a_d_est: amplitude_est,
    })
}

/// Which scale multiplies `s` in the renormalized-mass equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    W,
    V,
}

/// Renormalized mass `a*_N(s)` solving `ν*_{c,N} + s·y_N = ν_{1,N}(a) + a`.
///
/// `nu_star` and `y` are passed in so that repeated solves share one
/// critical-point and scale computation.
pub fn renormalized_mass_with(target: f64, n_scales: usize, p: &FlowParams) -> Result<f64> {
    let lo_limit = -0.5 * p.lf().powf(-2.0 * (n_scales as f64 - 1.0));
    let rhs = |a: f64| -> Result<f64> { Ok(nu_1n(a, n_scales, p)? + a) };
    let mut lo = lo_limit * (1.0 - 1e-9);
    let lo_val = rhs(lo)?;
    if lo_val > target {
        return Err(Error::Bracket {
            reason: format!("target {target} below the solvable range (min {lo_val})"),
        });
    }
    let mut hi = lo_limit.abs().max(1e-300);
    let mut grow = 0;
    while rhs(hi)? < target {
        lo = hi;
        hi *= 4.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::Bracket {
                reason: format!("target {target} above the solvable range"),
            });
        }
    }
    let scale = target.abs().max(1.0);
    if rhs(0.0)? == target {
        return Ok(0.0);
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let v = rhs(mid)?;
        if (v - target).abs() < 1e-14 * scale {
            return Ok(mid);
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (vl, vh) = (rhs(lo)?, rhs(hi)?);
    Ok(if (vl - target).abs() <= (vh - target).abs() { lo } else { hi })
}

/// Renormalized mass for window coordinate `s`.
pub fn renormalized_mass(s: f64, n_scales: usize, bc: BoundaryCondition, window: Window, p: &FlowParams, scales: &ScaleSet) -> Result<f64> {
    let nu_star = effective_critical_point(bc, n_scales, p)?;
    let y = match window {
        Window::W => scales.w_n,
        Window::V => scales.v_n,
    };
    renormalized_mass_with(nu_star + s * y, n_scales, p)
}

/// Window prediction `χ = n^{−1} Σ_{n,2}(s) × (BN)^{1/2} L^{2N}` (d = 4) or
/// `× g_∞^{−1/2} L^{Nd/2}` (d > 4).
pub fn predicted_susceptibility(s: f64, n_scales: usize, p: &FlowParams, scales: &ScaleSet, cfg: &QuadratureConfig) -> Result<f64> {
    let nf = p.n as f64;
    let sigma = sigma_moment(nf, 2.0, s, cfg)?;
    let l = p.lf();
    let nn = n_scales as f64;
    let vol = if p.d == 4 {
        (scales.b * nn).sqrt() * l.powf(2.0 * nn)
    } else {
        scales.g_inf_est.powf(-0.5) * l.powf(nn * p.d as f64 / 2.0)
    };
    Ok(sigma / nf * vol)
}

/// Massive-regime mass `m²_ε` solving `ν_c(0) + ε = ν_c(m²) + m²`.
pub fn massive_mass(eps: f64, p: &FlowParams) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", "must be positive"));
    }
    let target = nu_c(p, 0.0)? + eps;
    let rhs = |m2: f64| -> Result<f64> { Ok(nu_c(p, m2)? + m2) };
    let mut lo = 0.0;
    let mut hi = eps;
    while rhs(hi)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Bracket {
                reason: "massive-regime root not bracketed".into(),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if rhs(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Infinite-volume susceptibility `1/m²_ε` at `ν_c(0) + ε`.
pub fn massive_susceptibility(eps: f64, p: &FlowParams) -> Result<f64> {
    Ok(1.0 / massive_mass(eps, p)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn d4(g: f64) -> FlowParams {
        FlowParams::new(4, 1, 2, g).unwrap()
    }

    #[test]
    fn beta_constant_in_d4_at_zero_mass() {
        let p = d4(0.01);
        for j in [0, 1, 7, 1000] {
            assert_relative_eq!(coefficients(j, 0.0, &p).unwrap().beta, p.b_const(), max_relative = 1e-15);
        }
    }

    #[test]
    fn xi_vanishes_by_default() {
        let p = d4(0.01);
        assert_eq!(coefficients(3, 0.2, &p).unwrap().xi, 0.0);
    }

    #[test]
    fn fixed_point_at_zero() {
        let p = d4(0.01);
        let s = CouplingState {
            j: 0,
            g: 0.0,
            nu: 0.0,
            mu: 0.0,
            deriv: None,
        };
        let t = pt_step(&s, 0.0, &p).unwrap();
        assert_eq!((t.g, t.mu), (0.0, 0.0));
    }

    #[test]
    fn mass_scale_values() {
        assert_eq!(mass_scale(0.0, 2), None);
        assert_eq!(mass_scale(-1.0, 2), None);
        assert_eq!(mass_scale(1.0 / 16.0, 2), Some(2));
        assert_eq!(mass_scale(0.07, 2), Some(1));
        assert_eq!(vartheta(3, 1.0 / 16.0, 2), 0.5);
        assert_eq!(vartheta(2, 1.0 / 16.0, 2), 1.0);
    }

    #[test]
    fn negative_mass_outside_domain_is_rejected() {
        let p = d4(0.01);
        assert!(coefficients(10, -0.01, &p).is_err());
    }
}
