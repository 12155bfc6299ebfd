//! Space-time points, spatial domains, parabolic cylinders and patches of the
//! parabolic boundary.
//!
//! A domain is one of three shapes: the whole space, the supergraph
//! `{x_n > φ(x')}` of a Lipschitz profile, or an open box `Π (0, L_i)`.
//! All objects here are immutable once built and every operation is pure.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Tolerance used when deciding that a point sits on a boundary.
const ON_BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point {0:?} is not inside the domain")]
    NotInDomain(Vec<f64>),
    #[error("point {0:?} is not on the domain boundary")]
    NotOnBoundary(Vec<f64>),
    #[error("radius {r} must lie in (0, {r0})")]
    RadiusOutOfRange { r: f64, r0: f64 },
    #[error("{0} is interior to the cylinder, not on its parabolic boundary")]
    InteriorAnchor(SpaceTimePoint),
    #[error("invalid domain: {0}")]
    InvalidSpec(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// A point `(x, t)`; time is measured in units of length squared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: Vec<f64>, t: f64) -> Result<Self, GeometryError> {
        if x.is_empty() {
            return Err(GeometryError::InvalidSpec("a point needs at least one coordinate".into()));
        }
        if !t.is_finite() || x.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidSpec(format!("non-finite point ({x:?}, {t})")));
        }
        Ok(Self { x, t })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn origin(n: usize) -> Self {
        Self { x: vec![0.0; n], t: 0.0 }
    }
}

impl fmt::Display for SpaceTimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.x.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "; {})", self.t)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// The profile `φ` of a graph domain. Slopes are bounded by the domain's
/// Lipschitz constant `m`, which the cone and sawtooth variants use directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphProfile {
    /// `φ ≡ 0`, the half-space.
    Flat,
    /// `φ(x') = m|x'|`.
    Cone,
    /// Triangle wave with slopes `±m`: `φ(x') = m · dist(x', pZ)`.
    Sawtooth { period: f64 },
    /// Piecewise-linear interpolation of a table, constant outside it.
    Samples { xs: Vec<f64>, ys: Vec<f64> },
}

impl GraphProfile {
    fn eval(&self, m: f64, xp: &[f64]) -> f64 {
        match self {
            GraphProfile::Flat => 0.0,
            GraphProfile::Cone => m * norm(xp),
            GraphProfile::Sawtooth { period } => {
                let s = xp.first().copied().unwrap_or(0.0);
                let k = (s / period).round();
                m * (s - k * period).abs()
            }
            GraphProfile::Samples { xs, ys } => {
                let s = xp.first().copied().unwrap_or(0.0);
                interpolate(xs, ys, s)
            }
        }
    }

    /// Kinks of the one-variable profile inside `[a, b]`.
    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            GraphProfile::Flat => {}
            GraphProfile::Cone => {
                if a < 0.0 && b > 0.0 {
                    out.push(0.0);
                }
            }
            GraphProfile::Sawtooth { period } => {
                let half = 0.5 * period;
                let mut k = (a / half).ceil();
                while k * half < b {
                    out.push(k * half);
                    k += 1.0;
                }
            }
            GraphProfile::Samples { xs, .. } => {
                out.extend(xs.iter().copied().filter(|&s| s > a && s < b));
            }
        }
        out
    }
}

fn interpolate(xs: &[f64], ys: &[f64], s: f64) -> f64 {
    if s <= xs[0] {
        return ys[0];
    }
    if s >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = xs.partition_point(|&v| v <= s);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let w = (s - x0) / (x1 - x0);
    ys[j - 1] * (1.0 - w) + ys[j] * w
}

/// Spatial domain `Ω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    WholeSpace {
        n: usize,
    },
    /// `Ω = {x : x_n > φ(x')}` in a single chart.
    Graph {
        n: usize,
        m: f64,
        r0: f64,
        phi: GraphProfile,
    },
    /// `Ω = Π (0, sides[i])`.
    Box {
        n: usize,
        sides: Vec<f64>,
    },
}

/// Interior and exterior corkscrew balls at a boundary point.
#[derive(Clone, Debug, PartialEq)]
pub struct Corkscrew {
    pub interior: Vec<f64>,
    pub exterior: Vec<f64>,
    pub mu: f64,
    /// Radius `2μr` of both balls.
    pub radius: f64,
}

impl DomainSpec {
    pub fn whole_space(n: usize) -> Self {
        DomainSpec::WholeSpace { n }
    }

    pub fn half_space(n: usize, r0: f64) -> Self {
        DomainSpec::Graph { n, m: 0.0, r0, phi: GraphProfile::Flat }
    }

    pub fn unit_box(n: usize) -> Self {
        DomainSpec::Box { n, sides: vec![1.0; n] }
    }

    /// Checks the parameters, including the Lipschitz bound of sampled
    /// profiles.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.dim();
        if n == 0 {
            return Err(GeometryError::InvalidSpec("dimension must be at least 1".into()));
        }
        match self {
            DomainSpec::WholeSpace { .. } => Ok(()),
            DomainSpec::Graph { m, r0, phi, .. } => {
                if !(*m >= 0.0 && m.is_finite()) {
                    return Err(GeometryError::InvalidSpec(format!("Lipschitz constant m = {m}")));
                }
                if !(*r0 > 0.0) {
                    return Err(GeometryError::InvalidSpec(format!("r0 = {r0} must be positive")));
                }
                match phi {
                    GraphProfile::Sawtooth { period } if !(*period > 0.0) => {
                        Err(GeometryError::InvalidSpec(format!("sawtooth period {period} must be positive")))
                    }
                    GraphProfile::Samples { xs, ys } => {
                        if xs.len() < 2 || xs.len() != ys.len() {
                            return Err(GeometryError::InvalidSpec("samples need matching xs/ys with at least two entries".into()));
                        }
                        for w in 0..xs.len() - 1 {
                            let dx = xs[w + 1] - xs[w];
                            if !(dx > 0.0) {
                                return Err(GeometryError::InvalidSpec("sample xs must increase".into()));
                            }
                            let slope = ((ys[w + 1] - ys[w]) / dx).abs();
                            if slope > m * (1.0 + 1e-12) {
                                return Err(GeometryError::InvalidSpec(format!("sample slope {slope} exceeds m = {m}")));
                            }
                        }
                        if n != 2 {
                            return Err(GeometryError::Unsupported("sampled profiles need n = 2".into()));
                        }
                        Ok(())
                    }
                    GraphProfile::Sawtooth { .. } if n != 2 => Err(GeometryError::Unsupported("sawtooth profiles need n = 2".into())),
                    _ => Ok(()),
                }
            }
            DomainSpec::Box { sides, .. } => {
                if sides.len() != n {
                    return Err(GeometryError::DimensionMismatch { expected: n, got: sides.len() });
                }
                if sides.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                    return Err(GeometryError::InvalidSpec(format!("box sides {sides:?}")));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::WholeSpace { n } | DomainSpec::Graph { n, .. } | DomainSpec::Box { n, .. } => *n,
        }
    }

    /// Short identifier used in reports.
    pub fn id(&self) -> String {
        match self {
            DomainSpec::WholeSpace { n } => format!("whole{n}"),
            DomainSpec::Graph { n, m, phi, .. } => {
                let p = match phi {
                    GraphProfile::Flat => "flat".to_string(),
                    GraphProfile::Cone => "cone".to_string(),
                    GraphProfile::Sawtooth { period } => format!("saw{period}"),
                    GraphProfile::Samples { xs, .. } => format!("samples{}", xs.len()),
                };
                format!("graph{n}-{p}-m{m}")
            }
            DomainSpec::Box { n, sides } => {
                let s: Vec<String> = sides.iter().map(|l| l.to_string()).collect();
                format!("box{n}-{}", s.join("x"))
            }
        }
    }

    /// Lipschitz constants `(m, r0)`; the whole space has no boundary and
    /// reports `r0 = ∞`.
    pub fn lipschitz_constants(&self) -> (f64, f64) {
        match self {
            DomainSpec::WholeSpace { .. } => (0.0, f64::INFINITY),
            DomainSpec::Graph { m, r0, .. } => (*m, *r0),
            DomainSpec::Box { n, sides } => {
                let m = if *n == 1 { 0.0 } else { 1.0 };
                (m, 0.5 * sides.iter().cloned().fold(f64::INFINITY, f64::min))
            }
        }
    }

    /// Corkscrew constant `μ(m) = 1/(4√(1+m²))`; boxes use `1/(8√n)` so the
    /// interior ball also clears corners and nearby faces.
    pub fn corkscrew_mu(&self) -> f64 {
        match self {
            DomainSpec::Box { n, .. } => 0.125 / (*n as f64).sqrt(),
            _ => {
                let (m, _) = self.lipschitz_constants();
                0.25 / (1.0 + m * m).sqrt()
            }
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GeometryError> {
        let n = self.dim();
        if x.len() != n {
            return Err(GeometryError::DimensionMismatch { expected: n, got: x.len() });
        }
        Ok(())
    }

    /// Graph profile value at the tangential coordinates of `x`.
    pub fn profile_at(&self, x: &[f64]) -> Option<f64> {
        match self {
            DomainSpec::Graph { n, m, phi, .. } => Some(phi.eval(*m, &x[..n - 1])),
            _ => None,
        }
    }

    /// `x ∈ Ω` for the open set `Ω`; boundary points are outside.
    pub fn contains(&self, x: &[f64]) -> Result<bool, GeometryError> {
        self.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        match self {
            DomainSpec::WholeSpace { .. } => true,
            DomainSpec::Graph { n, m, phi, .. } => x[n - 1] > phi.eval(*m, &x[..n - 1]),
            DomainSpec::Box { sides, .. } => x.iter().zip(sides).all(|(&c, &l)| c > 0.0 && c < l),
        }
    }

    /// `x ∈ ∂Ω` up to a relative tolerance of `1e-12`.
    pub fn on_boundary(&self, x: &[f64]) -> Result<bool, GeometryError> {
        self.check_dim(x)?;
        let tol = ON_BOUNDARY_TOL * (1.0 + norm(x));
        Ok(match self {
            DomainSpec::WholeSpace { .. } => false,
            DomainSpec::Graph { n, m, phi, .. } => (x[n - 1] - phi.eval(*m, &x[..n - 1])).abs() <= tol,
            DomainSpec::Box { sides, .. } => {
                let inside = x.iter().zip(sides).all(|(&c, &l)| c >= -tol && c <= l + tol);
                let touches = x.iter().zip(sides).any(|(&c, &l)| c.abs() <= tol || (c - l).abs() <= tol);
                inside && touches
            }
        })
    }

    /// `x ∈ closure(Ω)`.
    pub fn closure_contains(&self, x: &[f64]) -> Result<bool, GeometryError> {
        Ok(self.contains(x)? || self.on_boundary(x)?)
    }

    /// `dist(x, ∂Ω)` for `x ∈ Ω`.
    ///
    /// Flat graphs and boxes are exact. The profiles offered here are all
    /// piecewise linear, so curved graphs are handled by exact projection onto
    /// each linear piece inside the window `|s - x'| ≤ x_n - φ(x')`, which
    /// contains every candidate foot point.
    pub fn boundary_distance(&self, x: &[f64]) -> Result<f64, GeometryError> {
        if !self.contains(x)? {
            return Err(GeometryError::NotInDomain(x.to_vec()));
        }
        Ok(match self {
            DomainSpec::WholeSpace { .. } => f64::INFINITY,
            DomainSpec::Box { sides, .. } => x.iter().zip(sides).map(|(&c, &l)| c.min(l - c)).fold(f64::INFINITY, f64::min),
            DomainSpec::Graph { n, m, phi, .. } => {
                let n = *n;
                let vertical = x[n - 1] - phi.eval(*m, &x[..n - 1]);
                match phi {
                    GraphProfile::Flat => x[n - 1],
                    _ if n == 1 => vertical,
                    GraphProfile::Cone if n > 2 => {
                        // Rotational symmetry reduces to the planar problem.
                        planar_graph_distance(phi, *m, norm(&x[..n - 1]), x[n - 1])
                    }
                    _ if n == 2 => planar_graph_distance(phi, *m, x[0], x[1]),
                    _ => return Err(GeometryError::Unsupported(format!("boundary distance for {phi:?} in dimension {n}"))),
                }
            }
        })
    }

    /// Corkscrew balls at the boundary point `y` for `0 < r < r0`: the
    /// interior center sits at `y + (r/2)e` and the exterior center at
    /// `y - (r/2)e`, where `e` is the inward axis (`e_n` for graphs, the
    /// normalized sum of inward face normals for boxes).
    pub fn corkscrew(&self, y: &[f64], r: f64) -> Result<Corkscrew, GeometryError> {
        self.check_dim(y)?;
        let (_, r0) = self.lipschitz_constants();
        if matches!(self, DomainSpec::WholeSpace { .. }) || !self.on_boundary(y)? {
            return Err(GeometryError::NotOnBoundary(y.to_vec()));
        }
        if !(r > 0.0 && r < r0) {
            return Err(GeometryError::RadiusOutOfRange { r, r0 });
        }
        let n = self.dim();
        let mut e = vec![0.0; n];
        match self {
            DomainSpec::Graph { .. } => e[n - 1] = 1.0,
            DomainSpec::Box { sides, .. } => {
                let tol = ON_BOUNDARY_TOL * (1.0 + norm(y));
                for i in 0..n {
                    if y[i].abs() <= tol {
                        e[i] = 1.0;
                    } else if (y[i] - sides[i]).abs() <= tol {
                        e[i] = -1.0;
                    }
                }
                let len = norm(&e);
                e.iter_mut().for_each(|c| *c /= len);
            }
            DomainSpec::WholeSpace { .. } => unreachable!(),
        }
        let mu = self.corkscrew_mu();
        let radius = 2.0 * mu * r;
        let mut interior: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a + 0.5 * r * b).collect();
        if let DomainSpec::Box { sides, .. } = self {
            // Keep the interior ball off faces that pass close to y.
            for i in 0..n {
                if e[i] == 0.0 {
                    interior[i] = interior[i].clamp(radius, sides[i] - radius);
                }
            }
        }
        let exterior = y.iter().zip(&e).map(|(a, b)| a - 0.5 * r * b).collect();
        Ok(Corkscrew { interior, exterior, mu, radius })
    }

    /// Checks `|φ(a) - φ(b)| ≤ m|a - b|` on random pairs; returns the largest
    /// observed difference quotient.
    pub fn sampled_lipschitz_quotient(&self, pairs: usize, spread: f64, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let DomainSpec::Graph { n, m, phi, .. } = self else {
            return 0.0;
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = n - 1;
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let a: Vec<f64> = (0..k).map(|_| rng.random_range(-spread..spread)).collect();
            let b: Vec<f64> = (0..k).map(|_| rng.random_range(-spread..spread)).collect();
            let d = distance(&a, &b);
            if d > 0.0 {
                worst = worst.max((phi.eval(*m, &a) - phi.eval(*m, &b)).abs() / d);
            }
        }
        worst
    }
}

/// Exact distance from `(s0, h0)` to the graph of a piecewise-linear profile.
fn planar_graph_distance(phi: &GraphProfile, m: f64, s0: f64, h0: f64) -> f64 {
    let vertical = h0 - phi.eval(m, &[s0]);
    let (a, b) = (s0 - vertical, s0 + vertical);
    let mut knots = vec![a];
    knots.extend(phi.breakpoints(a, b));
    knots.push(b);
    let mut best = vertical;
    for w in knots.windows(2) {
        let (p, q) = ([w[0], phi.eval(m, &[w[0]])], [w[1], phi.eval(m, &[w[1]])]);
        best = best.min(point_segment_distance([s0, h0], p, q));
    }
    best
}

fn point_segment_distance(x: [f64; 2], p: [f64; 2], q: [f64; 2]) -> f64 {
    let d = [q[0] - p[0], q[1] - p[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = if len2 > 0.0 { (((x[0] - p[0]) * d[0] + (x[1] - p[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let foot = [p[0] + s * d[0], p[1] + s * d[1]];
    distance(&x, &foot)
}

/// `C_{R,r}(Y) = B_R(y) × (s - r², s + r²)`; the standard cylinder `C_r`
/// has `R = r`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParabolicCylinder {
    pub center: SpaceTimePoint,
    pub radius: f64,
    pub half_width: f64,
}

impl ParabolicCylinder {
    pub fn new(center: SpaceTimePoint, radius: f64, half_width: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && half_width > 0.0) {
            return Err(GeometryError::InvalidSpec(format!("cylinder radii must be positive, got R = {radius}, r = {half_width}")));
        }
        Ok(Self { center, radius, half_width })
    }

    pub fn standard(center: SpaceTimePoint, r: f64) -> Result<Self, GeometryError> {
        Self::new(center, r, r)
    }

    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        distance(x, &self.center.x) < self.radius && (t - self.center.t).abs() < self.half_width * self.half_width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    Bottom,
    Lateral,
    Mixed,
}

/// `Δ_r(Y) = {Z ∈ ∂_p Q : |z - y| < r, |τ - s| < r²}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPatch {
    pub anchor: SpaceTimePoint,
    pub r: f64,
    pub kind: PatchKind,
}

impl BoundaryPatch {
    /// Membership of a parabolic-boundary point `(z, τ)`.
    pub fn contains(&self, z: &[f64], tau: f64) -> bool {
        distance(z, &self.anchor.x) < self.r && (tau - self.anchor.t).abs() < self.r * self.r
    }

    /// Smallest radius whose patch contains `(z, τ)` is anything above this.
    pub fn threshold(anchor: &SpaceTimePoint, z: &[f64], tau: f64) -> f64 {
        distance(z, &anchor.x).max((tau - anchor.t).abs().sqrt())
    }
}

/// Builds `Δ_r(Y)` after checking that `Y` lies on the parabolic boundary.
pub fn patch(domain: &DomainSpec, anchor: &SpaceTimePoint, r: f64) -> Result<BoundaryPatch, GeometryError> {
    domain.check_dim(&anchor.x)?;
    if !(r > 0.0) {
        return Err(GeometryError::RadiusOutOfRange { r, r0: f64::INFINITY });
    }
    let y = &anchor.x;
    let s = anchor.t;
    let on_boundary = domain.on_boundary(y)?;
    if s < 0.0 {
        return Err(GeometryError::InvalidSpec(format!("anchor time {s} is negative")));
    }
    if s == 0.0 {
        if !(on_boundary || domain.contains(y)?) {
            return Err(GeometryError::NotInDomain(y.clone()));
        }
    } else if !on_boundary {
        return if domain.contains(y)? {
            Err(GeometryError::InteriorAnchor(anchor.clone()))
        } else {
            Err(GeometryError::NotOnBoundary(y.clone()))
        };
    }
    let reaches_bottom = s < r * r;
    let reaches_lateral = match domain {
        DomainSpec::WholeSpace { .. } => false,
        _ => on_boundary || domain.boundary_distance(y)? < r,
    };
    let kind = match (reaches_bottom, reaches_lateral) {
        (true, true) => PatchKind::Mixed,
        (true, false) => PatchKind::Bottom,
        _ => PatchKind::Lateral,
    };
    Ok(BoundaryPatch { anchor: anchor.clone(), r, kind })
}

/// `Ω^δ`, optionally intersected with a ball `B_ρ(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShrunkenSet {
    pub domain: DomainSpec,
    pub margin: f64,
    pub ball: Option<(Vec<f64>, f64)>,
}

impl ShrunkenSet {
    pub fn new(domain: DomainSpec, margin: f64, ball: Option<(Vec<f64>, f64)>) -> Result<Self, GeometryError> {
        if !(margin > 0.0) {
            return Err(GeometryError::InvalidSpec(format!("margin {margin} must be positive")));
        }
        Ok(Self { domain, margin, ball })
    }

    /// `Ω_ρ^{μρ}(y)`, the spatial part of the slices `Ω_ρ^±`.
    pub fn corkscrew_slice(domain: &DomainSpec, y: &[f64], rho: f64) -> Self {
        Self { domain: domain.clone(), margin: domain.corkscrew_mu() * rho, ball: Some((y.to_vec(), rho)) }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if let Some((c, rho)) = &self.ball {
            if distance(x, c) >= *rho {
                return false;
            }
        }
        if !self.domain.contains_unchecked(x) {
            return false;
        }
        match self.domain.boundary_distance(x) {
            Ok(d) => d > self.margin,
            Err(_) => false,
        }
    }

    /// Membership in the closure; sup and inf of continuous functions over
    /// the open set are attained here.
    pub fn closure_contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        if let Some((c, rho)) = &self.ball {
            if distance(x, c) > *rho * (1.0 + SLACK) {
                return false;
            }
        }
        match self.domain.boundary_distance(x) {
            Ok(d) => self.domain.contains_unchecked(x) && d >= self.margin * (1.0 - SLACK),
            Err(_) => false,
        }
    }
}

/// `U'_R = Q ∩ {|x - y| ≤ K√(t - s), ρ0 ≤ √(t - s) ≤ R}`; with `ρ0 = 0` this
/// is `U_R`. Also carries the lateral shells `S_ρ` of `C_{Kρ,ρ}(Y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRegion {
    pub anchor: SpaceTimePoint,
    pub aperture: f64,
    pub rho0: f64,
    pub big_r: f64,
}

/// Checks the constraints and returns the region.
pub fn observation_region(anchor: SpaceTimePoint, aperture: f64, rho0: f64, big_r: f64) -> Result<ObservationRegion, GeometryError> {
    if !(aperture >= 1.0) {
        return Err(GeometryError::InvalidSpec(format!("aperture K = {aperture} must be at least 1")));
    }
    if !(rho0 >= 0.0 && rho0 <= big_r && big_r > 0.0) {
        return Err(GeometryError::InvalidSpec(format!("need 0 <= rho0 <= R, got {rho0}, {big_r}")));
    }
    Ok(ObservationRegion { anchor, aperture, rho0, big_r })
}

impl ObservationRegion {
    /// Membership ignoring the cylinder `Q`; callers intersect with `Q`.
    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        let dt = t - self.anchor.t;
        if dt <= 0.0 {
            return false;
        }
        let root = dt.sqrt();
        distance(x, &self.anchor.x) <= self.aperture * root && root >= self.rho0 && root <= self.big_r
    }

    /// Grid realization of `S_ρ`: nodes within `h/2` of the sphere
    /// `|x - y| = Kρ` with `|t - s| < ρ²`.
    pub fn shell_contains(&self, x: &[f64], t: f64, rho: f64, h: f64) -> bool {
        ((distance(x, &self.anchor.x) - self.aperture * rho).abs() <= 0.5 * h + 1e-12) && (t - self.anchor.t).abs() < rho * rho
    }
}
