//! Hierarchical lattice: group structure, random-walk step matrices,
//! Laplacians for free (FBC) and periodic (PBC) boundary conditions, and the
//! block-projection decomposition of their resolvents.
//!
//! A site is an integer in `0..L^{dN}` whose base-`L^d` digits, least
//! significant first, are the positions of the site inside its 1-block,
//! 2-block, …, N-block. Each base-`L^d` digit holds `d` base-`L` digits, one
//! per axis.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of sites for dense matrices (2^14).
pub const MAX_SITES: usize = 1 << 14;

/// Hierarchical lattice parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// Side length of a 1-block, `L ≥ 2`.
    #[serde(rename = "L")]
    pub l: usize,
    /// Dimension `d ≥ 1`.
    pub d: usize,
    /// Number of scales `N ≥ 0`.
    #[serde(rename = "N")]
    pub scales: usize,
    /// Long-range exponent of the walk, 2 for the nearest-neighbour class.
    pub alpha: f64,
}

/// Boundary condition of the walk and Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Free,
    Periodic,
}

impl std::str::FromStr for BoundaryCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "free" | "fbc" | "f" => Ok(BoundaryCondition::Free),
            "periodic" | "pbc" | "p" => Ok(BoundaryCondition::Periodic),
            other => Err(Error::param("bc", format!("unknown boundary condition `{other}`"))),
        }
    }
}

impl LatticeSpec {
    /// Creates a spec with `α = 2`.
    pub fn new(l: usize, d: usize, scales: usize) -> Result<Self> {
        Self::with_alpha(l, d, scales, 2.0)
    }

    /// Creates a spec with a generic exponent.
    pub fn with_alpha(l: usize, d: usize, scales: usize, alpha: f64) -> Result<Self> {
        let spec = LatticeSpec { l, d, scales, alpha };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks `L ≥ 2`, `d ≥ 1`, `α > 0` and that `L^{dN}` fits in a `usize`.
    pub fn validate(&self) -> Result<()> {
        if self.l < 2 {
            return Err(Error::param("L", "must be at least 2"));
        }
        if self.d < 1 {
            return Err(Error::param("d", "must be at least 1"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::param("alpha", "must be positive and finite"));
        }
        let bits = (self.d * self.scales) as f64 * (self.l as f64).log2();
        if bits >= 62.0 {
            return Err(Error::param("N", "L^{dN} overflows the site index type"));
        }
        Ok(())
    }

    /// `L` as a float.
    pub fn lf(&self) -> f64 {
        self.l as f64
    }

    /// Block size `m = L^d`.
    pub fn block_size(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    /// `Ω_N = L^{dN}`, the number of sites.
    pub fn site_count(&self) -> usize {
        self.block_size().pow(self.scales as u32)
    }

    /// `Ω_N` as a float.
    pub fn volume(&self) -> f64 {
        self.lf().powi((self.d * self.scales) as i32)
    }

    /// Walk normalizer `z = (1 − L^{−d})/(L^α − 1)`.
    pub fn z(&self) -> f64 {
        let l = self.lf();
        (1.0 - l.powi(-(self.d as i32))) / (l.powf(self.alpha) - 1.0)
    }

    /// Laplacian rescaling `q = (1 − L^{−d})/(1 − L^{−(d+α)})`.
    pub fn q(&self) -> f64 {
        let l = self.lf();
        (1.0 - l.powi(-(self.d as i32))) / (1.0 - l.powf(-(self.d as f64 + self.alpha)))
    }

    /// FBC zero-mode mass `q L^{−αN}`.
    pub fn fbc_mass(&self) -> f64 {
        self.q() * self.lf().powf(-self.alpha * self.scales as f64)
    }

    /// Checks the dense-matrix size cap.
    pub fn check_size(&self, cap: usize) -> Result<()> {
        let sites = self.site_count();
        if sites > cap {
            return Err(Error::SizeCap { sites, cap });
        }
        Ok(())
    }

    fn check_site(&self, x: usize) -> Result<()> {
        let count = self.site_count();
        if x >= count {
            return Err(Error::SiteOutOfRange { index: x, count });
        }
        Ok(())
    }

    /// Cube coordinates `(x_1, …, x_d) ∈ {0, …, L^N − 1}^d` of a site.
    pub fn coordinates(&self, x: usize) -> Result<Vec<usize>> {
        self.check_site(x)?;
        let mut coords = vec![0usize; self.d];
        let mut rest = x;
        let mut weight = 1usize;
        for _ in 0..self.scales {
            for c in coords.iter_mut() {
                *c += (rest % self.l) * weight;
                rest /= self.l;
            }
            weight *= self.l;
        }
        Ok(coords)
    }

    /// Inverse of [`LatticeSpec::coordinates`].
    pub fn site_from_coordinates(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.d {
            return Err(Error::param("coords", "length must equal d"));
        }
        let side = self.l.pow(self.scales as u32);
        if coords.iter().any(|&c| c >= side) {
            return Err(Error::param("coords", "coordinate outside the cube"));
        }
        let mut x = 0usize;
        let mut place = 1usize;
        let mut c: Vec<usize> = coords.to_vec();
        for _ in 0..self.scales {
            for ci in c.iter_mut() {
                x += (*ci % self.l) * place;
                *ci /= self.l;
                place *= self.l;
            }
        }
        Ok(x)
    }
}

/// Smallest `j` such that `x` and `y` lie in the same `j`-block.
pub fn coalescence_scale(spec: &LatticeSpec, x: usize, y: usize) -> Result<usize> {
    spec.check_site(x)?;
    spec.check_site(y)?;
    Ok(coalescence_unchecked(spec.block_size(), x, y))
}

fn coalescence_unchecked(m: usize, mut x: usize, mut y: usize) -> usize {
    let mut j = 0;
    while x != y {
        x /= m;
        y /= m;
        j += 1;
    }
    j
}

/// Digit-wise mod-`L` addition of hierarchical coordinates.
pub fn group_add(spec: &LatticeSpec, x: usize, y: usize) -> Result<usize> {
    spec.check_site(x)?;
    spec.check_site(y)?;
    let (mut a, mut b) = (x, y);
    let mut out = 0usize;
    let mut place = 1usize;
    for _ in 0..spec.d * spec.scales {
        out += ((a % spec.l + b % spec.l) % spec.l) * place;
        a /= spec.l;
        b /= spec.l;
        place *= spec.l;
    }
    Ok(out)
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub dim: usize,
    pub entries: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        SquareMatrix {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from an entry function.
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(dim: usize, mut f: F) -> Self {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(f(i, j));
            }
        }
        SquareMatrix { dim, entries }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.chunks(self.dim).map(|r| r.iter().sum()).collect()
    }

    pub fn scale(&self, c: f64) -> Self {
        SquareMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        SquareMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Adds `c` times the identity.
    pub fn shift_diagonal(&self, c: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.dim {
            m.entries[i * self.dim + i] += c;
        }
        m
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let row = &other.entries[k * n..(k + 1) * n];
                for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        SquareMatrix { dim: n, entries: out }
    }

    /// Sup norm of the entries.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖M − Mᵀ‖_∞` over entries.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Inverse by Gauss–Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.dim;
        let mut a = self.entries.clone();
        let mut inv = Self::identity(n).entries;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
                .expect("non-empty pivot range");
            let p = a[pivot * n + col];
            if p.abs() < 1e-300 {
                return Err(Error::param("matrix", "singular matrix"));
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                    inv.swap(pivot * n + k, col * n + k);
                }
            }
            let ip = 1.0 / p;
            for k in 0..n {
                a[col * n + k] *= ip;
                inv[col * n + k] *= ip;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == 0.0 {
                    continue;
                }
                for k in 0..n {
                    a[r * n + k] -= f * a[col * n + k];
                    inv[r * n + k] -= f * inv[col * n + k];
                }
            }
        }
        Ok(SquareMatrix { dim: n, entries: inv })
    }

    /// Row-major CSV with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.entries.chunks(self.dim) {
            let line: Vec<String> = row.iter().map(|v| crate::io::fmt17(*v)).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

fn dense_spec(spec: &LatticeSpec) -> Result<()> {
    spec.validate()?;
    spec.check_size(MAX_SITES)
}

/// One-step transition matrix `J^F` or `J^P` of the hierarchical walk.
pub fn step_matrix(spec: &LatticeSpec, bc: BoundaryCondition) -> Result<SquareMatrix> {
    dense_spec(spec)?;
    if spec.scales < 1 {
        return Err(Error::param("N", "step matrix needs N >= 1"));
    }
    let m = spec.block_size();
    let l = spec.lf();
    let inv_z = 1.0 / spec.z();
    let expo = -(spec.d as f64 + spec.alpha);
    let per_scale: Vec<f64> = (0..=spec.scales).map(|j| inv_z * l.powf(expo * j as f64)).collect();
    let top = match bc {
        BoundaryCondition::Free => 0.0,
        BoundaryCondition::Periodic => l.powf(expo * spec.scales as f64),
    };
    Ok(SquareMatrix::from_fn(spec.site_count(), |x, y| {
        let j = coalescence_unchecked(m, x, y);
        let base = if j == 0 { 0.0 } else { per_scale[j] };
        base + top
    }))
}

/// `−Δ* = q(1 − J*)`.
pub fn laplacian(spec: &LatticeSpec, bc: BoundaryCondition) -> Result<SquareMatrix> {
    let j = step_matrix(spec, bc)?;
    Ok(SquareMatrix::identity(j.dim).sub(&j).scale(spec.q()))
}

/// Block-averaging projection `Q_j` with entries `L^{−dj}` on `j`-blocks.
pub fn block_projection(spec: &LatticeSpec, j: usize) -> Result<SquareMatrix> {
    dense_spec(spec)?;
    if j > spec.scales {
        return Err(Error::param("j", format!("must be at most N = {}", spec.scales)));
    }
    let span = spec.block_size().pow(j as u32);
    let value = 1.0 / span as f64;
    Ok(SquareMatrix::from_fn(
        spec.site_count(),
        |x, y| {
            if x / span == y / span {
                value
            } else {
                0.0
            }
        },
    ))
}

/// `P_j = Q_{j−1} − Q_j` for `1 ≤ j ≤ N`.
pub fn scale_projection(spec: &LatticeSpec, j: usize) -> Result<SquareMatrix> {
    if j == 0 || j > spec.scales {
        return Err(Error::param("j", format!("must lie in [1, {}]", spec.scales)));
    }
    Ok(block_projection(spec, j - 1)?.sub(&block_projection(spec, j)?))
}

/// `γ_j(a) = L^{2(j−1)}/(1 + a L^{2(j−1)})`.
pub fn gamma_j(l: f64, j: usize, a: f64) -> f64 {
    let s = l.powi(2 * (j as i32 - 1));
    s / (1.0 + a * s)
}

/// Lower end `−L^{−2(N−1)}` of the admissible mass range.
pub fn mass_floor(spec: &LatticeSpec) -> f64 {
    -spec.lf().powi(-2 * (spec.scales as i32 - 1))
}

fn check_alpha_two(spec: &LatticeSpec) -> Result<()> {
    if spec.alpha != 2.0 {
        return Err(Error::param("alpha", "covariance decomposition requires alpha = 2"));
    }
    Ok(())
}

fn check_mass(spec: &LatticeSpec, a: f64) -> Result<()> {
    if !a.is_finite() || a <= mass_floor(spec) {
        return Err(Error::SingularMass {
            a,
            reason: format!("need a > {}", mass_floor(spec)),
        });
    }
    Ok(())
}

/// Covariance component `C_j(a) = γ_j(a) P_j`.
pub fn covariance_component(spec: &LatticeSpec, j: usize, a: f64) -> Result<SquareMatrix> {
    check_alpha_two(spec)?;
    check_mass(spec, a)?;
    Ok(scale_projection(spec, j)?.scale(gamma_j(spec.lf(), j, a)))
}

/// Zero-mode mass `κ`: `a` for PBC, `a + qL^{−2N}` for FBC.
pub fn zero_mode_mass(spec: &LatticeSpec, bc: BoundaryCondition, a: f64) -> f64 {
    match bc {
        BoundaryCondition::Periodic => a,
        BoundaryCondition::Free => a + spec.fbc_mass(),
    }
}

/// Resolvent `(−Δ* + a)^{−1} = Σ_j C_j(a) + Q_N/κ`.
pub fn resolvent(spec: &LatticeSpec, bc: BoundaryCondition, a: f64) -> Result<SquareMatrix> {
    check_alpha_two(spec)?;
    check_mass(spec, a)?;
    let kappa = zero_mode_mass(spec, bc, a);
    if kappa.abs() < 1e-300 {
        return Err(Error::SingularMass {
            a,
            reason: "zero-mode mass vanishes".into(),
        });
    }
    let mut r = block_projection(spec, spec.scales)?.scale(1.0 / kappa);
    for j in 1..=spec.scales {
        r = r.add(&covariance_component(spec, j, a)?);
    }
    Ok(r)
}

/// Free susceptibility `Σ_y (−Δ*+a)^{−1}_{0y}`: `1/a` (PBC) or `1/(a + qL^{−2N})` (FBC).
pub fn free_susceptibility(spec: &LatticeSpec, bc: BoundaryCondition, a: f64) -> Result<f64> {
    check_mass(spec, a)?;
    let kappa = zero_mode_mass(spec, bc, a);
    if kappa == 0.0 {
        return Err(Error::SingularMass {
            a,
            reason: "zero-mode mass vanishes".into(),
        });
    }
    Ok(1.0 / kappa)
}

/// Infinite-volume Green's function diagonal
/// `(−Δ+a)^{−1}_{00} = Σ_{k≥0} (1−L^{−d}) L^{−(d−2)k}/(1 + a L^{2k})`.
pub fn greens_diagonal(l: usize, d: usize, a: f64) -> Result<f64> {
    if l < 2 {
        return Err(Error::param("L", "must be at least 2"));
    }
    if !(a >= 0.0) {
        return Err(Error::param("a", "must be nonnegative"));
    }
    if d <= 2 && a == 0.0 {
        return Err(Error::param("d", "series diverges for d <= 2 at a = 0"));
    }
    let lf = l as f64;
    let pref = 1.0 - lf.powi(-(d as i32));
    let mut sum = 0.0;
    for k in 0..100_000 {
        let kf = k as f64;
        let term = pref * lf.powf(-(d as f64 - 2.0) * kf) / (1.0 + a * lf.powf(2.0 * kf));
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    Ok(sum)
}
