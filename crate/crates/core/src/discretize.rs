//! Coefficient fields, grids and monotone explicit stepping for the
//! divergence and nondivergence operators.
//!
//! Both forms share one stencil layout: axis neighbours `±e_k` and, for
//! `n ≥ 2`, the diagonal neighbours `±(e_k + e_l)` and `±(e_k - e_l)`.
//! Cross derivatives are split along the diagonals by the sign of `a_kl`, so
//! under diagonal dominance (`a_kk ≥ Σ_{l≠k} |a_kl|`) every off-centre
//! weight is nonnegative. The divergence form applies the same splitting to
//! fluxes across axis and diagonal edges with arithmetic-mean edge
//! coefficients, which keeps it conservative; for constant coefficients the
//! two assemblies coincide.
//!
//! One explicit step `u ← u + τ L_h u` is then a stochastic matrix on the
//! active nodes, which is the discrete comparison principle.

use crate::geometry::{DomainSpec, GeometryError};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizeError {
    #[error("operator form mismatch: expected {expected}, field is {got}")]
    FormMismatch { expected: Form, got: Form },
    #[error("diagonal dominance fails at node {node} (x = {x:?}): a_{axis}{axis} falls short of the off-diagonal sum by {deficit}")]
    Dominance { node: usize, x: Vec<f64>, axis: usize, deficit: f64 },
    #[error("positivity violated at node {node} (x = {x:?}): centre weight {center}; tau <= {tau_max} restores it")]
    Positivity { node: usize, x: Vec<f64>, center: f64, tau_max: f64 },
    #[error("ellipticity: {0}")]
    Ellipticity(String),
    #[error("missing boundary value at node {0}")]
    MissingBoundary(usize),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Form {
    #[serde(rename = "div")]
    Divergence,
    #[serde(rename = "nondiv")]
    NonDivergence,
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Form::Divergence => "div",
            Form::NonDivergence => "nondiv",
        })
    }
}

/// Symmetric `n × n` matrix, `n ≤ MAX_DIM`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    a: [[f64; MAX_DIM]; MAX_DIM],
}

impl SymMatrix {
    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, &v) in d.iter().enumerate() {
            a[i][i] = v;
        }
        Self { n: d.len(), a }
    }

    /// Builds from rows, symmetrizing `(A + Aᵀ)/2`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        Self { n, a }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn quadratic(&self, xi: &[f64]) -> f64 {
        let mut q = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                q += self.a[i][j] * xi[i] * xi[j];
            }
        }
        q
    }

    pub fn max_abs_entry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max(self.a[i][j].abs());
            }
        }
        m
    }

    /// Eigenvalues by cyclic Jacobi rotations, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = self.a;
        for _sweep in 0..64 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[p][q] * a[p][q];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    let t = sgn / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// `min_k (a_kk - Σ_{l≠k} |a_kl|)` and the axis attaining it.
    pub fn dominance_slack(&self) -> (f64, usize) {
        let mut worst = (f64::INFINITY, 0);
        for k in 0..self.n {
            let off: f64 = (0..self.n).filter(|&l| l != k).map(|l| self.a[k][l].abs()).sum();
            let slack = self.a[k][k] - off;
            if slack < worst.0 {
                worst = (slack, k);
            }
        }
        worst
    }

    fn has_cross_terms(&self) -> bool {
        (0..self.n).any(|k| (0..self.n).any(|l| l != k && self.a[k][l] != 0.0))
    }
}

/// The named coefficient families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FieldKind {
    Identity {
        n: usize,
    },
    Diag {
        values: Vec<f64>,
    },
    /// `R(θ) diag(λ1, λ2) R(θ)ᵀ` in the plane with
    /// `θ(x, t) = angle + twist·|x|² + spin·t`, a swirl whose principal
    /// axes turn with the radius.
    Rotating {
        eigenvalues: [f64; 2],
        #[serde(default)]
        angle: f64,
        #[serde(default)]
        twist: f64,
        #[serde(default)]
        spin: f64,
    },
    /// Isotropic `c(x) I` with `c = ν^{-contrast · Π sin(π x_i / scale)}`.
    Checkerboard {
        n: usize,
        scale: f64,
        #[serde(default = "unit")]
        contrast: f64,
    },
    Constant {
        matrix: Vec<Vec<f64>>,
    },
}

fn unit() -> f64 {
    1.0
}

impl FieldKind {
    pub fn dim(&self) -> usize {
        match self {
            FieldKind::Identity { n } | FieldKind::Checkerboard { n, .. } => *n,
            FieldKind::Diag { values } => values.len(),
            FieldKind::Rotating { .. } => 2,
            FieldKind::Constant { matrix } => matrix.len(),
        }
    }
}

/// Coefficient matrix field `a_ij(x, t)` with ellipticity constant `ν`,
/// tagged with the operator form it is used in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    #[serde(flatten)]
    pub kind: FieldKind,
    pub nu: f64,
    pub form: Form,
}

/// Builds a named field after checking that its eigenvalues lie in
/// `[ν, ν⁻¹]` and its entries are bounded by `ν⁻¹`.
pub fn builtin_field(kind: FieldKind, nu: f64, form: Form) -> Result<CoefficientField, DiscretizeError> {
    let field = CoefficientField { kind, nu, form };
    field.validate()?;
    Ok(field)
}

impl CoefficientField {
    /// A field whose claimed `ν` is not checked; used to exercise the
    /// ellipticity report on deliberately wrong claims.
    pub fn unchecked(kind: FieldKind, nu: f64, form: Form) -> Self {
        Self { kind, nu, form }
    }

    pub fn heat(n: usize, form: Form) -> Self {
        Self { kind: FieldKind::Identity { n }, nu: 1.0, form }
    }

    pub fn validate(&self) -> Result<(), DiscretizeError> {
        let nu = self.nu;
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(DiscretizeError::Ellipticity(format!("nu = {nu} must lie in (0, 1]")));
        }
        let n = self.kind.dim();
        if n == 0 || n > MAX_DIM {
            return Err(DiscretizeError::Ellipticity(format!("dimension {n} outside 1..={MAX_DIM}")));
        }
        let in_box = |v: f64| v >= nu * (1.0 - 1e-12) && v <= (1.0 + 1e-12) / nu;
        let (lo, hi, entry) = match &self.kind {
            FieldKind::Identity { .. } => (1.0, 1.0, 1.0),
            FieldKind::Diag { values } => {
                let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi, hi.abs().max(lo.abs()))
            }
            FieldKind::Rotating { eigenvalues: [l1, l2], .. } => {
                let (lo, hi) = (l1.min(*l2), l1.max(*l2));
                (lo, hi, hi)
            }
            FieldKind::Checkerboard { scale, contrast, .. } => {
                if !(*scale > 0.0) || !(0.0..=1.0).contains(contrast) {
                    return Err(DiscretizeError::Ellipticity(format!(
                        "checkerboard needs scale > 0 and contrast in [0, 1], got {scale}, {contrast}"
                    )));
                }
                let lo = nu.powf(*contrast);
                (lo, 1.0 / lo, 1.0 / lo)
            }
            FieldKind::Constant { matrix } => {
                if matrix.iter().any(|row| row.len() != n) {
                    return Err(DiscretizeError::Ellipticity("constant matrix must be square".into()));
                }
                let a = SymMatrix::from_rows(matrix);
                let ev = a.eigenvalues();
                (ev[0], ev[n - 1], a.max_abs_entry())
            }
        };
        if !(in_box(lo) && in_box(hi)) || entry > (1.0 + 1e-12) / nu {
            return Err(DiscretizeError::Ellipticity(format!(
                "eigenvalues [{lo}, {hi}] (max entry {entry}) violate the box [{nu}, {}]",
                1.0 / nu
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn id(&self) -> String {
        let k = match &self.kind {
            FieldKind::Identity { .. } => "identity".to_string(),
            FieldKind::Diag { values } => {
                let v: Vec<String> = values.iter().map(|x| x.to_string()).collect();
                format!("diag({})", v.join(","))
            }
            FieldKind::Rotating { eigenvalues, twist, spin, .. } => {
                format!("rotating({},{};{},{})", eigenvalues[0], eigenvalues[1], twist, spin)
            }
            FieldKind::Checkerboard { scale, contrast, .. } => format!("checkerboard({scale},{contrast})"),
            FieldKind::Constant { matrix } => {
                let v: Vec<String> = matrix.iter().flatten().map(|x| x.to_string()).collect();
                format!("const({})", v.join(","))
            }
        };
        format!("{k}-nu{}-{}", self.nu, self.form)
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self.kind, FieldKind::Rotating { spin, .. } if spin != 0.0)
    }

    /// `a(x, t)`; times before zero reuse the `t = 0` coefficients.
    pub fn eval(&self, x: &[f64], t: f64) -> SymMatrix {
        let t = t.max(0.0);
        match &self.kind {
            FieldKind::Identity { n } => SymMatrix::identity(*n),
            FieldKind::Diag { values } => SymMatrix::diagonal(values),
            FieldKind::Rotating { eigenvalues: [l1, l2], angle, twist, spin } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let theta = angle + twist * r2 + spin * t;
                let (s, c) = theta.sin_cos();
                let a11 = l1 * c * c + l2 * s * s;
                let a22 = l1 * s * s + l2 * c * c;
                let a12 = (l1 - l2) * s * c;
                SymMatrix::from_rows(&[vec![a11, a12], vec![a12, a22]])
            }
            FieldKind::Checkerboard { n, scale, contrast } => {
                let p: f64 = x.iter().map(|&c| (std::f64::consts::PI * c / scale).sin()).product();
                let c = (-contrast * self.nu.ln() * p).exp();
                SymMatrix::diagonal(&vec![c; *n])
            }
            FieldKind::Constant { matrix } => SymMatrix::from_rows(matrix),
        }
    }
}

/// Monte-Carlo ellipticity audit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EllipticityReport {
    pub nu_observed_min: f64,
    pub max_entry: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Samples `(x, t)` in `[-4, 4]ⁿ × [0, 4]` and unit `ξ`, recording the
/// smallest Rayleigh quotient and the largest entry seen.
pub fn validate_ellipticity(field: &CoefficientField, sample_count: usize, seed: u64) -> EllipticityReport {
    let n = field.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut q_min = f64::INFINITY;
    let mut entry: f64 = 0.0;
    for _ in 0..sample_count.max(1) {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let t = rng.random_range(0.0..4.0);
        let xi: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr_normal())).collect();
        let len2: f64 = xi.iter().map(|c| c * c).sum();
        if len2 == 0.0 {
            continue;
        }
        let a = field.eval(&x, t);
        q_min = q_min.min(a.quadratic(&xi) / len2);
        entry = entry.max(a.max_abs_entry());
    }
    let nu = field.nu;
    EllipticityReport {
        nu_observed_min: q_min,
        max_entry: entry,
        samples: sample_count.max(1),
        passed: q_min >= nu * (1.0 - 1e-12) && entry <= (1.0 + 1e-12) / nu,
    }
}

/// Standard normal via Box–Muller, enough for drawing isotropic directions.
fn rand_distr_normal() -> impl rand::distr::Distribution<f64> {
    use rand::distr::Distribution;
    rand::distr::StandardUniform.map(|(u, v): (f64, f64)| {
        let u = 1.0 - u;
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Fixed(f64),
    Auto(String),
}

/// `{"h": float, "tau": "auto" | float}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub h: f64,
    #[serde(default = "auto_tau")]
    pub tau: TauSpec,
}

fn auto_tau() -> TauSpec {
    TauSpec::Auto("auto".into())
}

impl GridSpec {
    pub fn auto(h: f64) -> Self {
        Self { h, tau: auto_tau() }
    }

    pub fn fixed(h: f64, tau: f64) -> Self {
        Self { h, tau: TauSpec::Fixed(tau) }
    }

    /// Default step `τ = h²ν/(8n)`.
    pub fn resolve_tau(&self, nu: f64, n: usize) -> Result<f64, DiscretizeError> {
        match &self.tau {
            TauSpec::Fixed(t) if *t > 0.0 => Ok(*t),
            TauSpec::Fixed(t) => Err(DiscretizeError::InvalidGrid(format!("tau = {t} must be positive"))),
            TauSpec::Auto(s) if s == "auto" => Ok(self.h * self.h * nu / (8.0 * n as f64)),
            TauSpec::Auto(s) => Err(DiscretizeError::InvalidGrid(format!("tau must be \"auto\" or a number, got {s:?}"))),
        }
    }

    pub fn refined(&self) -> Self {
        let tau = match &self.tau {
            TauSpec::Fixed(t) => TauSpec::Fixed(t / 4.0),
            other => other.clone(),
        };
        Self { h: self.h / 2.0, tau }
    }
}

/// Axis-aligned spatial bounding box of the computational region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Extent {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn cube(n: usize, half_width: f64) -> Self {
        Self { lo: vec![-half_width; n], hi: vec![half_width; n] }
    }

    /// Bounding box of `points` widened by `margin` on every side.
    pub fn around(points: &[&[f64]], margin: f64) -> Self {
        let n = points[0].len();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for p in points {
            for i in 0..n {
                lo[i] = lo[i].min(p[i] - margin);
                hi[i] = hi[i].max(p[i] + margin);
            }
        }
        Self { lo, hi }
    }

    /// Same box with `by` added on every side.
    pub fn widened(&self, by: f64) -> Self {
        Self { lo: self.lo.iter().map(|v| v - by).collect(), hi: self.hi.iter().map(|v| v + by).collect() }
    }

    /// Same box with every half-width about its centre doubled.
    pub fn doubled(&self) -> Self {
        let lo = self.lo.iter().zip(&self.hi).map(|(a, b)| a - (b - a) / 2.0).collect();
        let hi = self.lo.iter().zip(&self.hi).map(|(a, b)| b + (b - a) / 2.0).collect();
        Self { lo, hi }
    }

    /// Clips to `[0, L]` boxes and half-spaces so no grid is wasted outside.
    pub fn clipped_to(&self, domain: &DomainSpec) -> Self {
        match domain {
            DomainSpec::Box { sides, .. } => Self { lo: vec![0.0; sides.len()], hi: sides.clone() },
            DomainSpec::Graph { n, phi: crate::geometry::GraphProfile::Flat, .. } => {
                let mut out = self.clone();
                out.lo[n - 1] = out.lo[n - 1].max(-1.0);
                out
            }
            DomainSpec::Graph { .. } => self.clone(),
            DomainSpec::WholeSpace { .. } => self.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Active,
    Lateral,
    Artificial,
    Exterior,
}

/// Uniform space grid with step `h`, time step `τ`, and node classes:
/// active (inside `Ω`), lateral (outside `Ω`, next to an active node),
/// artificial (on the truncation box, inside `Ω`) and exterior.
#[derive(Clone, Debug)]
pub struct Grid {
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    pub shape: Vec<usize>,
    /// Integer index of node 0 along each axis; node coordinates are
    /// `(index + base) · h`.
    base: Vec<i64>,
    strides: Vec<usize>,
    kinds: Vec<NodeKind>,
    active: Vec<usize>,
    lateral: Vec<usize>,
    artificial: Vec<usize>,
    /// Compact position of each node inside its class list.
    slot: Vec<u32>,
    id: String,
}

impl Grid {
    pub fn build(domain: &DomainSpec, nu: f64, spec: &GridSpec, extent: &Extent) -> Result<Self, DiscretizeError> {
        domain.validate()?;
        let n = domain.dim();
        let h = spec.h;
        if !(h > 0.0 && h.is_finite()) {
            return Err(DiscretizeError::InvalidGrid(format!("h = {h} must be positive")));
        }
        if extent.lo.len() != n || extent.hi.len() != n {
            return Err(DiscretizeError::InvalidGrid("extent dimension does not match the domain".into()));
        }
        let tau = spec.resolve_tau(nu, n)?;
        let extent = extent.clipped_to(domain);
        let mut base = Vec::with_capacity(n);
        let mut shape = Vec::with_capacity(n);
        for i in 0..n {
            let lo = (extent.lo[i] / h + 1e-9).floor() as i64;
            let hi = (extent.hi[i] / h - 1e-9).ceil() as i64;
            if hi - lo < 2 {
                return Err(DiscretizeError::InvalidGrid(format!("extent too small along axis {i}")));
            }
            base.push(lo);
            shape.push((hi - lo + 1) as usize);
        }
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let total: usize = shape.iter().product();
        if total > 60_000_000 {
            return Err(DiscretizeError::InvalidGrid(format!("{total} nodes is beyond the supported size")));
        }
        let mut grid = Grid {
            n,
            h,
            tau,
            shape,
            base,
            strides,
            kinds: vec![NodeKind::Exterior; total],
            active: Vec::new(),
            lateral: Vec::new(),
            artificial: Vec::new(),
            slot: vec![u32::MAX; total],
            id: String::new(),
        };
        let mut x = vec![0.0; n];
        let mut idx = vec![0usize; n];
        for flat in 0..total {
            grid.unflatten_into(flat, &mut idx);
            grid.coords_of_index(&idx, &mut x);
            let on_edge = idx.iter().zip(&grid.shape).any(|(&i, &s)| i == 0 || i + 1 == s);
            let inside = domain.contains_unchecked(&x);
            grid.kinds[flat] = match (inside, on_edge) {
                (true, false) => NodeKind::Active,
                (true, true) => NodeKind::Artificial,
                (false, _) => NodeKind::Exterior,
            };
        }
        let neighbourhood = grid.neighbourhood_offsets();
        for flat in 0..total {
            if grid.kinds[flat] != NodeKind::Active {
                continue;
            }
            for &off in &neighbourhood {
                let j = (flat as isize + off) as usize;
                if grid.kinds[j] == NodeKind::Exterior {
                    grid.kinds[j] = NodeKind::Lateral;
                }
            }
        }
        for flat in 0..total {
            let list = match grid.kinds[flat] {
                NodeKind::Active => &mut grid.active,
                NodeKind::Lateral => &mut grid.lateral,
                NodeKind::Artificial => &mut grid.artificial,
                NodeKind::Exterior => continue,
            };
            grid.slot[flat] = list.len() as u32;
            list.push(flat);
        }
        if grid.active.is_empty() {
            return Err(DiscretizeError::InvalidGrid("no active nodes inside the domain".into()));
        }
        grid.id =
            format!("{}-h{}-tau{:.6e}-{}", domain.id(), h, tau, grid.shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x"));
        Ok(grid)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn lateral(&self) -> &[usize] {
        &self.lateral
    }

    pub fn artificial(&self) -> &[usize] {
        &self.artificial
    }

    /// Position of `node` inside the list of its class.
    pub fn slot(&self, node: usize) -> usize {
        self.slot[node] as usize
    }

    fn unflatten_into(&self, mut flat: usize, idx: &mut [usize]) {
        for i in 0..self.n {
            idx[i] = flat / self.strides[i];
            flat %= self.strides[i];
        }
    }

    fn coords_of_index(&self, idx: &[usize], x: &mut [f64]) {
        for i in 0..self.n {
            x[i] = (idx[i] as i64 + self.base[i]) as f64 * self.h;
        }
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let mut idx = vec![0; self.n];
        let mut x = vec![0.0; self.n];
        self.unflatten_into(node, &mut idx);
        self.coords_of_index(&idx, &mut x);
        x
    }

    pub fn coords_into(&self, node: usize, x: &mut [f64]) {
        let mut idx = [0usize; MAX_DIM];
        self.unflatten_into(node, &mut idx[..self.n]);
        self.coords_of_index(&idx[..self.n], x);
    }

    /// Nearest node to `x`, if `x` is inside the grid box.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.n {
            return None;
        }
        let mut flat = 0;
        for i in 0..self.n {
            let k = (x[i] / self.h).round() as i64 - self.base[i];
            if k < 0 || k as usize >= self.shape[i] {
                return None;
            }
            flat += k as usize * self.strides[i];
        }
        Some(flat)
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.tau
    }

    /// Time level nearest to `t`.
    pub fn level_of(&self, t: f64) -> usize {
        (t / self.tau).round().max(0.0) as usize
    }

    /// Flat offsets of all `3ⁿ - 1` neighbours.
    fn neighbourhood_offsets(&self) -> Vec<isize> {
        let mut out = Vec::new();
        let count = 3usize.pow(self.n as u32);
        for code in 0..count {
            let mut c = code;
            let mut off = 0isize;
            for i in 0..self.n {
                let d = (c % 3) as isize - 1;
                c /= 3;
                off += d * self.strides[i] as isize;
            }
            if off != 0 {
                out.push(off);
            }
        }
        out
    }

    /// Stencil directions in index space.
    pub fn stencil_directions(&self) -> Vec<Direction> {
        let mut out = Vec::new();
        for k in 0..self.n {
            for sign in [1i8, -1] {
                out.push(Direction::Axis { k, sign });
            }
        }
        for k in 0..self.n {
            for l in k + 1..self.n {
                for sign in [1i8, -1] {
                    out.push(Direction::Diagonal { k, l, sign });
                }
                for sign in [1i8, -1] {
                    out.push(Direction::AntiDiagonal { k, l, sign });
                }
            }
        }
        out
    }

    fn flat_offset(&self, d: &Direction) -> isize {
        let s = |i: usize| self.strides[i] as isize;
        match *d {
            Direction::Axis { k, sign } => sign as isize * s(k),
            Direction::Diagonal { k, l, sign } => sign as isize * (s(k) + s(l)),
            Direction::AntiDiagonal { k, l, sign } => sign as isize * (s(k) - s(l)),
        }
    }
}

/// One stencil direction. `Diagonal` is `±(e_k + e_l)`, `AntiDiagonal` is
/// `±(e_k - e_l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Axis { k: usize, sign: i8 },
    Diagonal { k: usize, l: usize, sign: i8 },
    AntiDiagonal { k: usize, l: usize, sign: i8 },
}

impl Direction {
    /// Edge coefficient of this direction for the local matrix `a`.
    fn coefficient(&self, a: &SymMatrix) -> f64 {
        match *self {
            Direction::Axis { k, .. } => {
                let off: f64 = (0..a.dim()).filter(|&l| l != k).map(|l| a.get(k, l).abs()).sum();
                a.get(k, k) - off
            }
            Direction::Diagonal { k, l, .. } => a.get(k, l).max(0.0),
            Direction::AntiDiagonal { k, l, .. } => (-a.get(k, l)).max(0.0),
        }
    }
}

/// Explicit transition weights for one step `t → t + τ`:
/// `u_new[i] = c·u[i] + Σ_d w_d·u[i + offset[d]]` over active nodes `i`,
/// where `(c, w)` is the row of `i`. Identical rows are stored once.
#[derive(Clone, Debug)]
pub struct StepSystem {
    pub grid_id: String,
    pub t: f64,
    pub offsets: Vec<isize>,
    /// Row index per active slot.
    rows: Vec<u32>,
    /// Unique rows, `1 + offsets.len()` entries each, centre first.
    table: Vec<f64>,
    tau_max: f64,
}

impl StepSystem {
    pub fn directions(&self) -> usize {
        self.offsets.len()
    }

    pub fn slots(&self) -> usize {
        self.rows.len()
    }

    /// Number of distinct rows.
    pub fn unique_rows(&self) -> usize {
        self.table.len() / (self.offsets.len() + 1)
    }

    pub fn row(&self, slot: usize) -> (f64, &[f64]) {
        let stride = self.offsets.len() + 1;
        let start = self.rows[slot] as usize * stride;
        (self.table[start], &self.table[start + 1..start + stride])
    }

    /// Largest time step keeping every centre weight nonnegative.
    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    /// `new[i]` for every active node; boundary entries of `new` are left
    /// untouched.
    pub fn apply(&self, grid: &Grid, old: &[f64], new: &mut [f64]) {
        match self.offsets.len() {
            2 => self.apply_fixed::<2>(grid, old, new),
            8 => self.apply_fixed::<8>(grid, old, new),
            _ => self.apply_any(grid, old, new),
        }
    }

    fn apply_fixed<const D: usize>(&self, grid: &Grid, old: &[f64], new: &mut [f64]) {
        let offsets: [isize; D] = self.offsets[..].try_into().expect("stencil width");
        for (&i, &r) in grid.active.iter().zip(&self.rows) {
            let start = r as usize * (D + 1);
            let row: &[f64; D] = self.table[start + 1..start + 1 + D].try_into().expect("row width");
            let mut acc = self.table[start] * old[i];
            for k in 0..D {
                acc += row[k] * old[(i as isize + offsets[k]) as usize];
            }
            new[i] = acc;
        }
    }

    fn apply_any(&self, grid: &Grid, old: &[f64], new: &mut [f64]) {
        let stride = self.offsets.len() + 1;
        for (&i, &r) in grid.active.iter().zip(&self.rows) {
            let row = &self.table[r as usize * stride..(r as usize + 1) * stride];
            let mut acc = row[0] * old[i];
            for (wk, &off) in row[1..].iter().zip(&self.offsets) {
                acc += wk * old[(i as isize + off) as usize];
            }
            new[i] = acc;
        }
    }

    /// Transposed step: pushes the distribution `p` on active nodes one level
    /// back into `prev` (which must be zeroed by the caller).
    pub fn apply_transpose(&self, grid: &Grid, p: &[f64], prev: &mut [f64]) {
        match self.offsets.len() {
            2 => self.transpose_fixed::<2>(grid, p, prev),
            8 => self.transpose_fixed::<8>(grid, p, prev),
            _ => self.transpose_any(grid, p, prev),
        }
    }

    fn transpose_fixed<const D: usize>(&self, grid: &Grid, p: &[f64], prev: &mut [f64]) {
        let offsets: [isize; D] = self.offsets[..].try_into().expect("stencil width");
        for (&i, &r) in grid.active.iter().zip(&self.rows) {
            let mass = p[i];
            if mass == 0.0 {
                continue;
            }
            let start = r as usize * (D + 1);
            let row: &[f64; D] = self.table[start + 1..start + 1 + D].try_into().expect("row width");
            prev[i] += self.table[start] * mass;
            for k in 0..D {
                prev[(i as isize + offsets[k]) as usize] += row[k] * mass;
            }
        }
    }

    fn transpose_any(&self, grid: &Grid, p: &[f64], prev: &mut [f64]) {
        let stride = self.offsets.len() + 1;
        for (&i, &r) in grid.active.iter().zip(&self.rows) {
            let mass = p[i];
            if mass == 0.0 {
                continue;
            }
            let row = &self.table[r as usize * stride..(r as usize + 1) * stride];
            prev[i] += row[0] * mass;
            for (wk, &off) in row[1..].iter().zip(&self.offsets) {
                prev[(i as isize + off) as usize] += wk * mass;
            }
        }
    }
}

/// Interns rows by their exact bit patterns.
struct RowTable {
    index: HashMap<Vec<u64>, u32>,
    table: Vec<f64>,
    rows: Vec<u32>,
}

impl RowTable {
    fn new(slots: usize) -> Self {
        Self { index: HashMap::new(), table: Vec::new(), rows: Vec::with_capacity(slots) }
    }

    fn push(&mut self, row: &[f64]) {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        let next = self.index.len() as u32;
        let id = *self.index.entry(key).or_insert_with(|| {
            self.table.extend_from_slice(row);
            next
        });
        self.rows.push(id);
    }
}

fn assemble(field: &CoefficientField, grid: &Grid, t: f64, form: Form) -> Result<StepSystem, DiscretizeError> {
    if field.form != form {
        return Err(DiscretizeError::FormMismatch { expected: form, got: field.form });
    }
    if field.dim() != grid.n {
        return Err(DiscretizeError::GridMismatch(format!("field dimension {} on a {}-dimensional grid", field.dim(), grid.n)));
    }
    let dirs = grid.stencil_directions();
    let offsets: Vec<isize> = dirs.iter().map(|d| grid.flat_offset(d)).collect();
    let ratio = grid.tau / (grid.h * grid.h);
    let mut rows = RowTable::new(grid.active.len());
    let mut row = vec![0.0; dirs.len() + 1];
    let mut x = vec![0.0; grid.n];
    let mut xj = vec![0.0; grid.n];
    let mut tau_max = f64::INFINITY;
    let mut edge = vec![0.0; dirs.len()];
    for &i in &grid.active {
        grid.coords_into(i, &mut x);
        let a = field.eval(&x, t);
        let cross = a.has_cross_terms();
        if cross || form == Form::NonDivergence {
            let (slack, axis) = a.dominance_slack();
            if slack < -1e-12 {
                return Err(DiscretizeError::Dominance { node: i, x: x.clone(), axis, deficit: -slack });
            }
        }
        for (e, (d, &off)) in edge.iter_mut().zip(dirs.iter().zip(&offsets)) {
            *e = match form {
                Form::NonDivergence => d.coefficient(&a),
                Form::Divergence => {
                    grid.coords_into((i as isize + off) as usize, &mut xj);
                    let b = field.eval(&xj, t);
                    0.5 * (d.coefficient(&a) + d.coefficient(&b))
                }
            };
        }
        let total: f64 = edge.iter().sum();
        if total > 0.0 {
            tau_max = tau_max.min(grid.h * grid.h / total);
        }
        let mut row_sum = 0.0;
        for (slot, &e) in row[1..].iter_mut().zip(&edge) {
            *slot = ratio * e;
            row_sum += *slot;
        }
        row[0] = 1.0 - row_sum;
        rows.push(&row);
    }
    Ok(StepSystem { grid_id: grid.id.clone(), t, offsets, rows: rows.rows, table: rows.table, tau_max })
}

fn checked(system: StepSystem, grid: &Grid) -> Result<StepSystem, DiscretizeError> {
    let report = check_monotone(&system);
    if let Some(slot) = report.worst_row.filter(|_| !report.monotone) {
        let node = grid.active[slot];
        return Err(DiscretizeError::Positivity { node, x: grid.coords(node), center: system.row(slot).0, tau_max: system.tau_max });
    }
    Ok(system)
}

/// Conservative flux-form step for `Σ D_i(a_ij D_j u) - D_t u`.
pub fn assemble_step_divergence(field: &CoefficientField, grid: &Grid, t: f64) -> Result<StepSystem, DiscretizeError> {
    checked(assemble(field, grid, t, Form::Divergence)?, grid)
}

/// Pointwise step for `Σ a_ij D_ij u - D_t u`.
pub fn assemble_step_nondivergence(field: &CoefficientField, grid: &Grid, t: f64) -> Result<StepSystem, DiscretizeError> {
    checked(assemble(field, grid, t, Form::NonDivergence)?, grid)
}

/// Assembles with the field's own form.
pub fn assemble_step(field: &CoefficientField, grid: &Grid, t: f64) -> Result<StepSystem, DiscretizeError> {
    match field.form {
        Form::Divergence => assemble_step_divergence(field, grid, t),
        Form::NonDivergence => assemble_step_nondivergence(field, grid, t),
    }
}

/// Assembles without the positivity check, so that unstable systems can be
/// inspected with [`check_monotone`].
pub fn assemble_step_unchecked(field: &CoefficientField, grid: &Grid, t: f64) -> Result<StepSystem, DiscretizeError> {
    assemble(field, grid, t, field.form)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub monotone: bool,
    /// Active-node slot of the row with the smallest weight.
    pub worst_row: Option<usize>,
    pub worst_weight: f64,
    pub max_row_sum_error: f64,
}

/// Exact check of the stochastic-matrix property: nonnegative weights and
/// unit row sums.
pub fn check_monotone(system: &StepSystem) -> MonotoneReport {
    let mut worst = (None, f64::INFINITY);
    let mut sum_err: f64 = 0.0;
    for slot in 0..system.slots() {
        let (c, w) = system.row(slot);
        let row_min = w.iter().cloned().fold(c, f64::min);
        if row_min < worst.1 {
            worst = (Some(slot), row_min);
        }
        let s: f64 = c + w.iter().sum::<f64>();
        sum_err = sum_err.max((s - 1.0).abs());
    }
    MonotoneReport { monotone: worst.1 >= 0.0 && sum_err <= 1e-12, worst_row: worst.0, worst_weight: worst.1, max_row_sum_error: sum_err }
}

/// Values `u(node)` at one time level; boundary entries hold boundary data.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSlice {
    pub grid_id: String,
    pub t: f64,
    pub values: Vec<f64>,
}

/// One explicit step. `boundary` supplies the value at time `t + τ` for
/// every lateral and artificial node.
pub fn advance(
    slice: &TimeSlice,
    system: &StepSystem,
    grid: &Grid,
    boundary: &dyn Fn(usize) -> Option<f64>,
) -> Result<TimeSlice, DiscretizeError> {
    if slice.grid_id != system.grid_id || slice.grid_id != grid.id {
        return Err(DiscretizeError::GridMismatch(format!("slice on {}, system on {}", slice.grid_id, system.grid_id)));
    }
    if (slice.t - system.t).abs() > 1e-9 * grid.tau.max(slice.t.abs()) {
        return Err(DiscretizeError::GridMismatch(format!("slice at t = {}, system at t = {}", slice.t, system.t)));
    }
    if slice.values.iter().any(|v| !v.is_finite()) {
        return Err(DiscretizeError::GridMismatch("slice holds non-finite values".into()));
    }
    let mut values = slice.values.clone();
    system.apply(grid, &slice.values, &mut values);
    for &b in grid.lateral.iter().chain(&grid.artificial) {
        values[b] = boundary(b).ok_or(DiscretizeError::MissingBoundary(b))?;
    }
    Ok(TimeSlice { grid_id: slice.grid_id.clone(), t: slice.t + grid.tau, values })
}
