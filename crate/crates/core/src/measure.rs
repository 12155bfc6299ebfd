//! Discrete caloric measure, kernels, Green's functions and a Monte-Carlo
//! exit-distribution oracle.
//!
//! The forward march evaluates `u(X)` for given boundary data. The backward
//! march transports a unit mass from `X` through the transposed steps and
//! records where it is absorbed: on the bottom slice, at lateral nodes (per
//! time level) and at the artificial truncation boundary. That record is the
//! whole discrete measure `ω^X`, so one backward pass answers every patch
//! and radius at once, and `u(X) = Σ φ·ω^X` holds exactly.

use crate::discretize::{assemble_step, check_monotone, CoefficientField, DiscretizeError, Extent, Grid, GridSpec, NodeKind, StepSystem};
use crate::geometry::{BoundaryPatch, DomainSpec, GeometryError, SpaceTimePoint};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::collections::BTreeMap;
use thiserror::Error;

/// Relative artificial-boundary mass tolerated before the box is doubled.
pub const TRUNCATION_TOL: f64 = 1e-4;
const MAX_DOUBLINGS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("point {0:?} lies outside the computational grid")]
    OffGrid(Vec<f64>),
    #[error("{0} does not sit on an active node")]
    NotActive(SpaceTimePoint),
    #[error("time order violated: {0}")]
    TimeOrder(String),
    #[error("patch of radius {r} has no grid realization at h = {h}; resolution too coarse")]
    EmptyPatch { r: f64, h: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Boundary data `φ` on the parabolic boundary of the truncated cylinder.
pub trait BoundaryData: Sync {
    /// Value on the bottom `t = 0`, including lateral corner nodes.
    fn bottom(&self, x: &[f64]) -> f64;
    /// Value on the lateral boundary for `t > 0`.
    fn lateral(&self, x: &[f64], t: f64) -> f64;
    /// Value held on the artificial truncation boundary.
    fn artificial(&self, x: &[f64]) -> f64 {
        self.bottom(x)
    }
}

pub struct Constant(pub f64);

impl BoundaryData for Constant {
    fn bottom(&self, _: &[f64]) -> f64 {
        self.0
    }
    fn lateral(&self, _: &[f64], _: f64) -> f64 {
        self.0
    }
}

/// Exact 0/1 indicator of a patch.
pub struct Indicator<'a>(pub &'a BoundaryPatch);

impl BoundaryData for Indicator<'_> {
    fn bottom(&self, x: &[f64]) -> f64 {
        if self.0.contains(x, 0.0) {
            1.0
        } else {
            0.0
        }
    }
    fn lateral(&self, x: &[f64], t: f64) -> f64 {
        if self.0.contains(x, t) {
            1.0
        } else {
            0.0
        }
    }
    fn artificial(&self, _: &[f64]) -> f64 {
        0.0
    }
}

/// Data from a pair of closures.
pub struct DataFn<B, L> {
    pub bottom: B,
    pub lateral: L,
}

impl<B, L> BoundaryData for DataFn<B, L>
where
    B: Fn(&[f64]) -> f64 + Sync,
    L: Fn(&[f64], f64) -> f64 + Sync,
{
    fn bottom(&self, x: &[f64]) -> f64 {
        (self.bottom)(x)
    }
    fn lateral(&self, x: &[f64], t: f64) -> f64 {
        (self.lateral)(x, t)
    }
}

/// Bottom-only data, zero on the lateral boundary.
pub fn bottom_data<B: Fn(&[f64]) -> f64 + Sync>(b: B) -> DataFn<B, impl Fn(&[f64], f64) -> f64 + Sync> {
    DataFn { bottom: b, lateral: |_: &[f64], _: f64| 0.0 }
}

/// Box of half-width `max(6√(T/ν), 4K√T)` around the given points: six
/// diffusion lengths at the largest admissible diffusivity `ν⁻¹`, or the
/// aperture reach.
pub fn auto_extent(points: &[&[f64]], t_span: f64, k: f64, nu: f64) -> Extent {
    let root = t_span.max(0.0).sqrt();
    Extent::around(points, (6.0 * root / nu.sqrt()).max(4.0 * k * root))
}

/// Domain, field and grid with the step systems needed to march on it.
#[derive(Clone, Debug)]
pub struct Problem {
    pub domain: DomainSpec,
    pub field: CoefficientField,
    pub grid: Grid,
    fixed: Option<StepSystem>,
    lateral_x: Vec<Vec<f64>>,
    artificial_x: Vec<Vec<f64>>,
}

impl Problem {
    pub fn new(domain: DomainSpec, field: CoefficientField, spec: &GridSpec, extent: &Extent) -> Result<Self, MeasureError> {
        field.validate()?;
        if field.dim() != domain.dim() {
            return Err(
                DiscretizeError::GridMismatch(format!("field dimension {} on a {}-dimensional domain", field.dim(), domain.dim())).into()
            );
        }
        let grid = Grid::build(&domain, field.nu, spec, extent)?;
        // Always assemble once: this surfaces positivity and dominance
        // failures before any marching.
        let first = assemble_step(&field, &grid, 0.0)?;
        let fixed = if field.is_time_dependent() { None } else { Some(first) };
        let lateral_x = grid.lateral().iter().map(|&b| grid.coords(b)).collect();
        let artificial_x = grid.artificial().iter().map(|&b| grid.coords(b)).collect();
        Ok(Self { domain, field, grid, fixed, lateral_x, artificial_x })
    }

    /// Problem on a box of half-width `max(6√T, 4K√T)` around `points`.
    pub fn around(
        domain: DomainSpec,
        field: CoefficientField,
        spec: &GridSpec,
        points: &[&[f64]],
        t_span: f64,
        k: f64,
    ) -> Result<Self, MeasureError> {
        let extent = auto_extent(points, t_span, k, field.nu);
        Self::new(domain, field, spec, &extent)
    }

    pub fn with_extent(&self, extent: &Extent) -> Result<Self, MeasureError> {
        let spec = GridSpec::fixed(self.grid.h, self.grid.tau);
        Self::new(self.domain.clone(), self.field.clone(), &spec, extent)
    }

    pub fn extent(&self) -> Extent {
        let n = self.grid.n;
        let first = self.grid.coords(0);
        let last = self.grid.coords(self.grid.node_count() - 1);
        Extent::new(first[..n].to_vec(), last[..n].to_vec())
    }

    pub fn grid_id(&self) -> &str {
        self.grid.id()
    }

    pub fn has_artificial_boundary(&self) -> bool {
        !self.grid.artificial().is_empty()
    }

    /// Step from `level` to `level + 1`, with coefficients frozen at
    /// `t_level`.
    pub fn system_from(&self, level: usize) -> Result<Cow<'_, StepSystem>, MeasureError> {
        match &self.fixed {
            Some(s) => Ok(Cow::Borrowed(s)),
            None => Ok(Cow::Owned(assemble_step(&self.field, &self.grid, self.grid.time(level))?)),
        }
    }

    /// Active node and time level nearest to `x`.
    pub fn locate(&self, x: &SpaceTimePoint) -> Result<(usize, usize), MeasureError> {
        let node = self.grid.nearest_node(&x.x).ok_or_else(|| MeasureError::OffGrid(x.x.clone()))?;
        if self.grid.kind(node) != NodeKind::Active {
            return Err(MeasureError::NotActive(x.clone()));
        }
        Ok((node, self.grid.level_of(x.t)))
    }

    /// Initial slice at level 0.
    pub fn initial_slice(&self, data: &dyn BoundaryData) -> Vec<f64> {
        let mut u = vec![0.0; self.grid.node_count()];
        let mut x = vec![0.0; self.grid.n];
        for &i in self.grid.active().iter().chain(self.grid.lateral()) {
            self.grid.coords_into(i, &mut x);
            u[i] = data.bottom(&x);
        }
        for (&b, x) in self.grid.artificial().iter().zip(&self.artificial_x) {
            u[b] = data.artificial(x);
        }
        u
    }

    /// Marches `values` (a slice at `start`) forward to `end`, calling
    /// `observe(level, slice)` at every level including `start`.
    pub fn march_from(
        &self,
        start: usize,
        mut values: Vec<f64>,
        data: &dyn BoundaryData,
        end: usize,
        observe: &mut dyn FnMut(usize, &[f64]),
    ) -> Result<Vec<f64>, MeasureError> {
        if values.len() != self.grid.node_count() {
            return Err(DiscretizeError::GridMismatch("slice length does not match the grid".into()).into());
        }
        let mut next = values.clone();
        let frozen: Vec<f64> = self.artificial_x.iter().map(|x| data.artificial(x)).collect();
        observe(start, &values);
        for level in start..end {
            let sys = self.system_from(level)?;
            sys.apply(&self.grid, &values, &mut next);
            let t = self.grid.time(level + 1);
            for (&b, x) in self.grid.lateral().iter().zip(&self.lateral_x) {
                next[b] = data.lateral(x, t);
            }
            for (&b, &v) in self.grid.artificial().iter().zip(&frozen) {
                next[b] = v;
            }
            std::mem::swap(&mut values, &mut next);
            observe(level + 1, &values);
        }
        Ok(values)
    }

    /// Forward solve from the bottom to `end`.
    pub fn march(&self, data: &dyn BoundaryData, end: usize, observe: &mut dyn FnMut(usize, &[f64])) -> Result<Vec<f64>, MeasureError> {
        self.march_from(0, self.initial_slice(data), data, end, observe)
    }

    /// `u(X)` for data `φ`.
    pub fn solve(&self, data: &dyn BoundaryData, x: &SpaceTimePoint) -> Result<f64, MeasureError> {
        let (node, level) = self.locate(x)?;
        let u = self.march(data, level, &mut |_, _| {})?;
        Ok(u[node])
    }

    /// Backward transport of a unit mass from `X` down to `stop_level`,
    /// keeping copies of the surviving distribution at `snapshot_levels`.
    pub fn measure(&self, x: &SpaceTimePoint, stop_level: usize, snapshot_levels: &[usize]) -> Result<CaloricMeasure, MeasureError> {
        let (x_node, x_level) = self.locate(x)?;
        if x_level <= stop_level {
            return Err(MeasureError::TimeOrder(format!("X at level {x_level} is not after the stop level {stop_level}")));
        }
        let grid = &self.grid;
        let n_lat = grid.lateral().len();
        let mut lateral = vec![0.0; (x_level - stop_level - 1) * n_lat];
        let mut artificial = vec![0.0; grid.artificial().len()];
        let mut snapshots = Vec::new();
        let mut p = vec![0.0; grid.node_count()];
        let mut prev = vec![0.0; grid.node_count()];
        p[x_node] = 1.0;
        for k in (stop_level + 1..=x_level).rev() {
            let level = k - 1;
            let sys = self.system_from(level)?;
            prev.iter_mut().for_each(|v| *v = 0.0);
            sys.apply_transpose(grid, &p, &mut prev);
            for (slot, &b) in grid.artificial().iter().enumerate() {
                artificial[slot] += prev[b];
                prev[b] = 0.0;
            }
            if level > stop_level {
                let row = &mut lateral[(level - stop_level - 1) * n_lat..(level - stop_level) * n_lat];
                for (slot, &b) in grid.lateral().iter().enumerate() {
                    row[slot] = prev[b];
                    prev[b] = 0.0;
                }
            }
            if snapshot_levels.contains(&level) {
                snapshots.push((level, prev.clone()));
            }
            std::mem::swap(&mut p, &mut prev);
        }
        Ok(CaloricMeasure {
            x: SpaceTimePoint { x: grid.coords(x_node), t: grid.time(x_level) },
            x_node,
            x_level,
            stop_level,
            slice: p,
            lateral,
            artificial,
            snapshots,
        })
    }

    /// Discrete `ω^X(Δ)` on this fixed grid.
    pub fn patch_measure(&self, patch: &BoundaryPatch, x: &SpaceTimePoint) -> Result<MeasureEstimate, MeasureError> {
        let m = self.measure(x, 0, &[])?;
        if !m.realizes(&self.grid, patch) {
            return Err(MeasureError::EmptyPatch { r: patch.r, h: self.grid.h });
        }
        let (bottom, lateral) = m.patch_mass(&self.grid, patch);
        let value = bottom + lateral;
        Ok(MeasureEstimate {
            value,
            bottom_part: bottom,
            lateral_part: lateral,
            grid_id: self.grid.id().to_string(),
            h: self.grid.h,
            tau: self.grid.tau,
            truncation_change: relative(m.artificial_total(), value),
            mc_value: None,
            mc_stderr: None,
        })
    }

    /// Discrete Green's function: forward solve from mass `1/hⁿ` at the
    /// node of `Y` with zero boundary data, read at `X`.
    pub fn green(&self, x: &SpaceTimePoint, y: &SpaceTimePoint) -> Result<f64, MeasureError> {
        if x.t <= y.t {
            return Err(MeasureError::TimeOrder(format!("X.t = {} must exceed Y.t = {}", x.t, y.t)));
        }
        let (x_node, x_level) = self.locate(x)?;
        let (y_node, y_level) = self.locate(y)?;
        if x_level <= y_level {
            return Err(MeasureError::TimeOrder("X and Y share a time level".into()));
        }
        let mut start = vec![0.0; self.grid.node_count()];
        start[y_node] = self.grid.h.powi(-(self.grid.n as i32));
        let u = self.march_from(y_level, start, &Constant(0.0), x_level, &mut |_, _| {})?;
        Ok(u[x_node])
    }
}

fn relative(change: f64, value: f64) -> f64 {
    if change == 0.0 {
        0.0
    } else {
        change / value.abs()
    }
}

/// The full discrete measure `ω^X` as produced by the backward march.
#[derive(Clone, Debug)]
pub struct CaloricMeasure {
    /// `X` snapped to its grid node and level.
    pub x: SpaceTimePoint,
    pub x_node: usize,
    pub x_level: usize,
    pub stop_level: usize,
    /// Mass on each node at the stop level (artificial nodes excluded).
    pub slice: Vec<f64>,
    /// Lateral absorption, row per level `stop+1 ..= x_level-1`, column per
    /// lateral slot.
    pub lateral: Vec<f64>,
    /// Mass absorbed at each artificial node over all levels.
    pub artificial: Vec<f64>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

/// Where a piece of boundary mass sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteKind {
    Bottom,
    Lateral,
}

impl CaloricMeasure {
    pub fn artificial_total(&self) -> f64 {
        self.artificial.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.slice.iter().sum::<f64>() + self.lateral.iter().sum::<f64>() + self.artificial_total()
    }

    /// Every boundary site with positive mass, in a fixed order: slice nodes
    /// first, then lateral levels from the bottom up.
    pub fn for_each_site(&self, grid: &Grid, mut f: impl FnMut(&[f64], f64, f64, SiteKind)) {
        let mut x = vec![0.0; grid.n];
        let t_stop = grid.time(self.stop_level);
        for (i, &m) in self.slice.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            grid.coords_into(i, &mut x);
            let kind = if self.stop_level > 0 && grid.kind(i) == NodeKind::Lateral { SiteKind::Lateral } else { SiteKind::Bottom };
            f(&x, t_stop, m, kind);
        }
        let n_lat = grid.lateral().len();
        if n_lat == 0 {
            return;
        }
        let xs: Vec<Vec<f64>> = grid.lateral().iter().map(|&b| grid.coords(b)).collect();
        for (row, masses) in self.lateral.chunks(n_lat).enumerate() {
            let t = grid.time(self.stop_level + 1 + row);
            for (slot, &m) in masses.iter().enumerate() {
                if m != 0.0 {
                    f(&xs[slot], t, m, SiteKind::Lateral);
                }
            }
        }
    }

    /// `(bottom part, lateral part)` of `ω^X(Δ)`.
    pub fn patch_mass(&self, grid: &Grid, patch: &BoundaryPatch) -> (f64, f64) {
        let (mut bottom, mut lateral) = (0.0, 0.0);
        self.for_each_site(grid, |x, t, m, kind| {
            if patch.contains(x, t) {
                match kind {
                    SiteKind::Bottom => bottom += m,
                    SiteKind::Lateral => lateral += m,
                }
            }
        });
        (bottom, lateral)
    }

    /// Whether some boundary node of the grid falls in the patch.
    pub fn realizes(&self, grid: &Grid, patch: &BoundaryPatch) -> bool {
        let t_stop = grid.time(self.stop_level);
        let slice_hit = grid.active().iter().chain(grid.lateral()).any(|&i| patch.contains(&grid.coords(i), t_stop));
        if slice_hit {
            return true;
        }
        grid.lateral().iter().any(|&b| {
            let x = grid.coords(b);
            (self.stop_level + 1..self.x_level).any(|l| patch.contains(&x, grid.time(l)))
        })
    }

    /// `Σ φ·ω^X`, which equals the forward solution at `X`.
    pub fn integrate(&self, grid: &Grid, data: &dyn BoundaryData) -> f64 {
        let mut acc = 0.0;
        self.for_each_site(grid, |x, t, m, kind| {
            acc += m * match kind {
                SiteKind::Bottom => data.bottom(x),
                SiteKind::Lateral => data.lateral(x, t),
            };
        });
        for (&b, &m) in grid.artificial().iter().zip(&self.artificial) {
            if m != 0.0 {
                acc += m * data.artificial(&grid.coords(b));
            }
        }
        acc
    }

    /// Mass left on active nodes of the stop slice: the measure of the
    /// slice `Ω × {t_stop}` in the restart formulation.
    pub fn slice_mass(&self, grid: &Grid) -> f64 {
        grid.active().iter().map(|&i| self.slice[i]).sum()
    }

    /// `ω^X(Δ_r(anchor))` for every radius, from one pass over the sites.
    /// A site belongs to `Δ_r` iff `max(|z - y|, √|τ - s|) < r`.
    pub fn profile(&self, grid: &Grid, anchor: &SpaceTimePoint, radii: &[f64]) -> Vec<(f64, f64)> {
        let mut sites: Vec<(f64, f64)> = Vec::new();
        self.for_each_site(grid, |x, t, m, _| sites.push((BoundaryPatch::threshold(anchor, x, t), m)));
        sites.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Vec::with_capacity(radii.len());
        let mut acc = 0.0;
        let mut next = 0;
        let mut order: Vec<usize> = (0..radii.len()).collect();
        order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
        let mut values = vec![0.0; radii.len()];
        for &k in &order {
            while next < sites.len() && sites[next].0 < radii[k] {
                acc += sites[next].1;
                next += 1;
            }
            values[k] = acc;
        }
        for (r, v) in radii.iter().zip(values) {
            out.push((*r, v));
        }
        out
    }

    /// `G(X; (z, t_level))` read off a snapshot: the surviving mass at `z`
    /// divided by `hⁿ`.
    pub fn green_at(&self, grid: &Grid, level: usize, node: usize) -> Option<f64> {
        self.snapshots.iter().find(|(l, _)| *l == level).map(|(_, p)| p[node] / grid.h.powi(grid.n as i32))
    }
}

/// One measured value with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub value: f64,
    pub bottom_part: f64,
    pub lateral_part: f64,
    pub grid_id: String,
    pub h: f64,
    pub tau: f64,
    /// Artificial-boundary mass relative to the value; bounds the relative
    /// change a larger truncation box could make.
    pub truncation_change: f64,
    pub mc_value: Option<f64>,
    pub mc_stderr: Option<f64>,
}

/// Grid and truncation settings shared by the convenience entry points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub grid: GridSpec,
    /// Fixed computational box; `None` picks `max(6√T, 4K√T)` and doubles it
    /// until the truncation indicator drops below `1e-4`.
    #[serde(default)]
    pub extent: Option<Extent>,
    #[serde(default = "one")]
    pub k: f64,
}

fn one() -> f64 {
    1.0
}

impl SolveOptions {
    pub fn new(h: f64) -> Self {
        Self { grid: GridSpec::auto(h), extent: None, k: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveValue {
    pub value: f64,
    pub grid_id: String,
    pub truncation_change: f64,
}

/// `u(X)` for data `φ`, doubling the truncation box until the value moves
/// by less than `1e-4` relative.
pub fn solve_dirichlet(
    domain: &DomainSpec,
    field: &CoefficientField,
    data: &dyn BoundaryData,
    x: &SpaceTimePoint,
    opts: &SolveOptions,
) -> Result<SolveValue, MeasureError> {
    if !(x.t > 0.0) {
        return Err(MeasureError::TimeOrder(format!("X.t = {} must be positive", x.t)));
    }
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[&x.x], x.t, opts.k, field.nu));
    let mut problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let mut value = problem.solve(data, x)?;
    if opts.extent.is_some() || !problem.has_artificial_boundary() {
        return Ok(SolveValue { value, grid_id: problem.grid_id().into(), truncation_change: 0.0 });
    }
    let mut change = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        let bigger = problem.with_extent(&problem.extent().doubled())?;
        let v = bigger.solve(data, x)?;
        change = relative((v - value).abs(), v);
        problem = bigger;
        value = v;
        if change < TRUNCATION_TOL {
            break;
        }
    }
    Ok(SolveValue { value, grid_id: problem.grid_id().into(), truncation_change: change })
}

/// Problem for measuring patches seen from `x`, with the box doubled until
/// the artificial mass is below `1e-4` of `reference(measure)`.
pub fn measured_problem(
    domain: &DomainSpec,
    field: &CoefficientField,
    x: &SpaceTimePoint,
    anchors: &[&[f64]],
    opts: &SolveOptions,
    reference: impl Fn(&Problem, &CaloricMeasure) -> f64,
) -> Result<(Problem, CaloricMeasure), MeasureError> {
    let mut points: Vec<&[f64]> = vec![&x.x];
    points.extend_from_slice(anchors);
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&points, x.t, opts.k, field.nu));
    let mut problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let mut m = problem.measure(x, 0, &[])?;
    if opts.extent.is_some() {
        return Ok((problem, m));
    }
    for _ in 0..MAX_DOUBLINGS {
        let r = reference(&problem, &m);
        if relative(m.artificial_total(), r) < TRUNCATION_TOL {
            break;
        }
        problem = problem.with_extent(&problem.extent().doubled())?;
        m = problem.measure(x, 0, &[])?;
    }
    Ok((problem, m))
}

/// `ω^X(Δ)` with automatic truncation.
pub fn caloric_measure(
    domain: &DomainSpec,
    field: &CoefficientField,
    patch: &BoundaryPatch,
    x: &SpaceTimePoint,
    opts: &SolveOptions,
) -> Result<MeasureEstimate, MeasureError> {
    if x.t <= patch.anchor.t - patch.r * patch.r {
        return Err(MeasureError::TimeOrder("X precedes the patch".into()));
    }
    let (problem, m) = measured_problem(domain, field, x, &[&patch.anchor.x], opts, |p, m| {
        let (b, l) = m.patch_mass(&p.grid, patch);
        b + l
    })?;
    if !m.realizes(&problem.grid, patch) {
        return Err(MeasureError::EmptyPatch { r: patch.r, h: problem.grid.h });
    }
    let (bottom, lateral) = m.patch_mass(&problem.grid, patch);
    let value = bottom + lateral;
    Ok(MeasureEstimate {
        value,
        bottom_part: bottom,
        lateral_part: lateral,
        grid_id: problem.grid_id().into(),
        h: problem.grid.h,
        tau: problem.grid.tau,
        truncation_change: relative(m.artificial_total(), value),
        mc_value: None,
        mc_stderr: None,
    })
}

/// `ω^X(Δ_r(Y))` for each `r`, from one backward solve.
pub fn measure_profile(
    domain: &DomainSpec,
    field: &CoefficientField,
    x: &SpaceTimePoint,
    anchor: &SpaceTimePoint,
    radii: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<(f64, f64)>, MeasureError> {
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(GeometryError::InvalidSpec("radii must be ascending".into()).into());
    }
    let smallest = radii.first().copied().unwrap_or(0.0);
    let (problem, m) = measured_problem(domain, field, x, &[&anchor.x], opts, |p, m| m.profile(&p.grid, anchor, &[smallest])[0].1)?;
    Ok(m.profile(&problem.grid, anchor, radii))
}

/// `Γ(x, t; y, s) = (4π(t - s))^{-n/2} exp(-|x - y|²/(4(t - s)))`.
pub fn gaussian_kernel(n: usize, x: &SpaceTimePoint, y: &SpaceTimePoint) -> Result<f64, MeasureError> {
    let dt = x.t - y.t;
    if !(dt > 0.0) {
        return Err(MeasureError::TimeOrder(format!("X.t = {} must exceed Y.t = {}", x.t, y.t)));
    }
    if x.dim() != n || y.dim() != n {
        return Err(GeometryError::DimensionMismatch { expected: n, got: x.dim().max(y.dim()) }.into());
    }
    let d2: f64 = x.x.iter().zip(&y.x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((4.0 * std::f64::consts::PI * dt).powf(-(n as f64) / 2.0) * (-d2 / (4.0 * dt)).exp())
}

/// Discrete Green's function with automatic truncation (zero data on the
/// artificial boundary).
pub fn green_function(
    domain: &DomainSpec,
    field: &CoefficientField,
    x: &SpaceTimePoint,
    y: &SpaceTimePoint,
    opts: &SolveOptions,
) -> Result<f64, MeasureError> {
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[&x.x, &y.x], x.t - y.t, opts.k, field.nu));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    problem.green(x, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Bottom,
    Lateral,
    Artificial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExitSite {
    pub level: usize,
    pub node: usize,
    pub kind: ExitKind,
}

/// Exit counts of the time-reversed chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitHistogram {
    pub counts: BTreeMap<ExitSite, u64>,
    pub total_paths: u64,
    pub seed: u64,
}

impl ExitHistogram {
    pub fn hits(&self, grid: &Grid, patch: &BoundaryPatch) -> u64 {
        self.counts
            .iter()
            .filter(|(s, _)| s.kind != ExitKind::Artificial && patch.contains(&grid.coords(s.node), grid.time(s.level)))
            .map(|(_, c)| c)
            .sum()
    }

    /// `(p̂, binomial standard error)` for `ω^X(Δ)`.
    pub fn estimate(&self, grid: &Grid, patch: &BoundaryPatch) -> (f64, f64) {
        let n = self.total_paths as f64;
        let p = self.hits(grid, patch) as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    /// Sum of counts weighted by `φ` at the exit sites, divided by the
    /// number of paths.
    pub fn integrate(&self, grid: &Grid, data: &dyn BoundaryData) -> f64 {
        let mut acc = 0.0;
        for (s, &c) in &self.counts {
            let x = grid.coords(s.node);
            let v = match s.kind {
                ExitKind::Bottom => data.bottom(&x),
                ExitKind::Lateral => data.lateral(&x, grid.time(s.level)),
                ExitKind::Artificial => data.artificial(&x),
            };
            acc += c as f64 * v;
        }
        acc / self.total_paths as f64
    }
}

const PATHS_PER_CHUNK: u64 = 4096;

/// Simulates `n_paths` runs of the chain whose one-step law from an active
/// node is the row of the step system, run from `X` backward in time until
/// it reaches the bottom or a boundary node. Chunk `c` draws from the
/// ChaCha stream `c` of `seed`, so results do not depend on scheduling.
pub fn mc_exit_sample(problem: &Problem, x: &SpaceTimePoint, n_paths: u64, seed: u64) -> Result<ExitHistogram, MeasureError> {
    let sys = problem
        .fixed
        .as_ref()
        .ok_or_else(|| MeasureError::Unsupported("the Monte-Carlo oracle needs time-independent coefficients".into()))?;
    let report = check_monotone(sys);
    if !report.monotone {
        return Err(MeasureError::Unsupported(format!(
            "step system is not monotone (weight {}), the chain is undefined",
            report.worst_weight
        )));
    }
    let (start, start_level) = problem.locate(x)?;
    let grid = &problem.grid;
    let d = sys.directions();
    // Per active slot: centre weight and the cumulative off-centre law.
    let mut stay = Vec::with_capacity(grid.active().len());
    let mut cum = Vec::with_capacity(grid.active().len() * d);
    for slot in 0..grid.active().len() {
        let (c, w) = sys.row(slot);
        stay.push(c);
        let total: f64 = w.iter().sum();
        let mut acc = 0.0;
        for &wk in w {
            acc += wk / total;
            cum.push(acc);
        }
    }
    let chunks = n_paths.div_ceil(PATHS_PER_CHUNK);
    let parts: Vec<BTreeMap<ExitSite, u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = PATHS_PER_CHUNK.min(n_paths - c * PATHS_PER_CHUNK);
            let mut hist = BTreeMap::new();
            for _ in 0..count {
                let site = walk(grid, sys, &stay, &cum, start, start_level, &mut rng);
                *hist.entry(site).or_insert(0) += 1;
            }
            hist
        })
        .collect();
    let mut counts = BTreeMap::new();
    for part in parts {
        for (k, v) in part {
            *counts.entry(k).or_insert(0) += v;
        }
    }
    Ok(ExitHistogram { counts, total_paths: n_paths, seed })
}

fn walk(grid: &Grid, sys: &StepSystem, stay: &[f64], cum: &[f64], mut node: usize, mut level: usize, rng: &mut impl Rng) -> ExitSite {
    let d = sys.directions();
    loop {
        let slot = grid.slot(node);
        // Holding time at a fixed node is geometric because the row does
        // not change with the level.
        let c = stay[slot];
        let held = if c > 0.0 {
            let u: f64 = 1.0 - rng.random::<f64>();
            (u.ln() / c.ln()).floor()
        } else {
            0.0
        };
        if held >= level as f64 {
            return ExitSite { level: 0, node, kind: ExitKind::Bottom };
        }
        level -= held as usize;
        let u: f64 = rng.random();
        let row = &cum[slot * d..(slot + 1) * d];
        let k = row.iter().position(|&v| u < v).unwrap_or(d - 1);
        node = (node as isize + sys.offsets[k]) as usize;
        level -= 1;
        let kind = grid.kind(node);
        if kind == NodeKind::Artificial {
            return ExitSite { level, node, kind: ExitKind::Artificial };
        }
        if level == 0 {
            return ExitSite { level, node, kind: ExitKind::Bottom };
        }
        if kind == NodeKind::Lateral {
            return ExitSite { level, node, kind: ExitKind::Lateral };
        }
    }
}

/// One row of the measure CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub domain_id: String,
    pub field_id: String,
    pub form: String,
    pub h: f64,
    pub tau: f64,
    #[serde(rename = "X")]
    pub x: String,
    #[serde(rename = "Y")]
    pub y: String,
    pub r: f64,
    pub value: f64,
    pub mc_value: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub truncation_change: f64,
}

impl MeasureRow {
    pub fn new(
        domain: &DomainSpec,
        field: &CoefficientField,
        x: &SpaceTimePoint,
        y: &SpaceTimePoint,
        r: f64,
        est: &MeasureEstimate,
    ) -> Self {
        Self {
            domain_id: domain.id(),
            field_id: field.id(),
            form: field.form.to_string(),
            h: est.h,
            tau: est.tau,
            x: x.to_string(),
            y: y.to_string(),
            r,
            value: est.value,
            mc_value: est.mc_value,
            mc_stderr: est.mc_stderr,
            truncation_change: est.truncation_change,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Form;
    use crate::geometry::patch;
    use approx::assert_relative_eq;
    use statrs::function::erf::{erf, erfc};

    fn heat1() -> CoefficientField {
        CoefficientField::heat(1, Form::Divergence)
    }

    fn pt(x: &[f64], t: f64) -> SpaceTimePoint {
        SpaceTimePoint::new(x.to_vec(), t).unwrap()
    }

    #[test]
    fn gaussian_kernel_examples() {
        let g = gaussian_kernel(1, &pt(&[0.0], 1.0), &pt(&[0.0], 0.0)).unwrap();
        assert_relative_eq!(g, (4.0 * std::f64::consts::PI).powf(-0.5), max_relative = 1e-15);
        let g2 = gaussian_kernel(1, &pt(&[2.0], 1.0), &pt(&[0.0], 0.0)).unwrap();
        assert_relative_eq!(g2, g * (-1.0f64).exp(), max_relative = 1e-14);
        assert!(gaussian_kernel(1, &pt(&[0.0], 0.0), &pt(&[0.0], 0.0)).is_err());
        // Riemann sum of the 2D kernel over a wide box.
        let h = 0.05;
        let mut s = 0.0;
        for i in -200..=200 {
            for j in -200..=200 {
                s += gaussian_kernel(2, &pt(&[i as f64 * h, j as f64 * h], 0.5), &pt(&[0.0, 0.0], 0.0)).unwrap();
            }
        }
        assert_relative_eq!(s * h * h, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn constant_data_is_preserved() {
        let opts = SolveOptions::new(0.05);
        let v = solve_dirichlet(&DomainSpec::whole_space(1), &heat1(), &Constant(1.0), &pt(&[0.3], 0.5), &opts).unwrap();
        assert_relative_eq!(v.value, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn step_and_window_data() {
        let opts = SolveOptions::new(0.02);
        let x = pt(&[0.0], 1.0);
        let step = bottom_data(|y: &[f64]| if y[0] < 0.0 { 1.0 } else { 0.0 });
        let v = solve_dirichlet(&DomainSpec::whole_space(1), &heat1(), &step, &x, &opts).unwrap();
        // The node at 0 carries value 0, so the half-node offset is O(h).
        assert!((v.value - 0.5).abs() < 0.02, "{}", v.value);
        let window = bottom_data(|y: &[f64]| if y[0].abs() < 1.0 { 1.0 } else { 0.0 });
        let v = solve_dirichlet(&DomainSpec::whole_space(1), &heat1(), &window, &x, &opts).unwrap();
        assert!((v.value - erf(0.5)).abs() / erf(0.5) < 0.02, "{}", v.value);
    }

    #[test]
    fn backward_measure_reproduces_forward_solution() {
        let domain = DomainSpec::half_space(1, 4.0);
        let problem = Problem::new(domain, heat1(), &GridSpec::auto(0.05), &Extent::new(vec![-1.0], vec![4.0])).unwrap();
        let x = pt(&[0.7], 0.6);
        let data = DataFn { bottom: |y: &[f64]| (3.0 * y[0]).sin() + 1.0, lateral: |_: &[f64], t: f64| t * t };
        let u = problem.solve(&data, &x).unwrap();
        let m = problem.measure(&x, 0, &[]).unwrap();
        assert_relative_eq!(m.integrate(&problem.grid, &data), u, max_relative = 1e-12);
        assert_relative_eq!(m.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn box_total_mass_is_one() {
        let problem = Problem::new(
            DomainSpec::Box { n: 2, sides: vec![1.0, 1.0] },
            CoefficientField::heat(2, Form::Divergence),
            &GridSpec::auto(0.05),
            &Extent::cube(2, 1.0),
        )
        .unwrap();
        assert!(!problem.has_artificial_boundary());
        let x = pt(&[0.5, 0.5], 0.3);
        let m = problem.measure(&x, 0, &[]).unwrap();
        assert_relative_eq!(m.total(), 1.0, epsilon = 1e-12);
        let all = BoundaryPatch { anchor: pt(&[0.5, 0.5], 0.0), r: 10.0, kind: crate::geometry::PatchKind::Mixed };
        let (b, l) = m.patch_mass(&problem.grid, &all);
        assert_relative_eq!(b + l, 1.0, epsilon = 1e-10);
        assert!(b > 0.0 && l > 0.0);
    }

    #[test]
    fn half_line_first_passage() {
        let domain = DomainSpec::half_space(1, 10.0);
        let problem = Problem::new(domain, heat1(), &GridSpec::auto(0.01), &Extent::new(vec![-0.1], vec![8.0])).unwrap();
        let x = pt(&[0.5], 1.0);
        let m = problem.measure(&x, 0, &[]).unwrap();
        let lateral: f64 = m.lateral.iter().sum();
        let exact = erfc(0.5 / 2.0);
        assert!((lateral - exact).abs() / exact < 0.02, "{lateral} vs {exact}");
    }

    #[test]
    fn profile_matches_patches_and_is_monotone() {
        let opts = SolveOptions { extent: Some(Extent::cube(1, 8.0)), ..SolveOptions::new(0.05) };
        let domain = DomainSpec::whole_space(1);
        let x = pt(&[0.0], 1.0);
        let o = pt(&[0.0], 0.0);
        let radii = [0.5, 1.0, 2.0, 50.0];
        let prof = measure_profile(&domain, &heat1(), &x, &o, &radii, &opts).unwrap();
        for w in prof.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        for &(r, v) in &prof[..3] {
            let p = patch(&domain, &o, r).unwrap();
            let est = caloric_measure(&domain, &heat1(), &p, &x, &opts).unwrap();
            assert_relative_eq!(est.value, v, max_relative = 1e-12);
            assert!((v - erf(r / 2.0)).abs() / erf(r / 2.0) < 0.05);
        }
        assert!(prof[3].1 > 1.0 - 1e-4);
    }

    #[test]
    fn green_matches_kernel_and_backward_snapshot() {
        let domain = DomainSpec::whole_space(1);
        let problem = Problem::new(domain, heat1(), &GridSpec::auto(0.05), &Extent::cube(1, 8.0)).unwrap();
        let x = pt(&[0.5], 1.0);
        let y = pt(&[0.0], 0.0);
        let g = problem.green(&x, &y).unwrap();
        let exact = gaussian_kernel(1, &x, &y).unwrap();
        assert!((g - exact).abs() / exact < 0.01);
        let m = problem.measure(&x, 0, &[0]).unwrap();
        let node = problem.grid.nearest_node(&y.x).unwrap();
        assert_relative_eq!(m.green_at(&problem.grid, 0, node).unwrap(), g, max_relative = 1e-12);
    }

    #[test]
    fn mc_histogram_counts_every_path() {
        let domain = DomainSpec::half_space(1, 4.0);
        let problem = Problem::new(domain, heat1(), &GridSpec::auto(0.1), &Extent::new(vec![-1.0], vec![4.0])).unwrap();
        let x = pt(&[0.5], 0.5);
        let hist = mc_exit_sample(&problem, &x, 10_000, 7).unwrap();
        assert_eq!(hist.counts.values().sum::<u64>(), 10_000);
        assert_relative_eq!(hist.integrate(&problem.grid, &Constant(1.0)), 1.0);
        let again = mc_exit_sample(&problem, &x, 10_000, 7).unwrap();
        assert_eq!(hist, again);
    }

    #[test]
    fn coarse_patch_is_reported() {
        let domain = DomainSpec::whole_space(1);
        let problem = Problem::new(domain.clone(), heat1(), &GridSpec::auto(0.5), &Extent::cube(1, 6.0)).unwrap();
        let p = patch(&domain, &pt(&[0.25], 0.0), 0.2).unwrap();
        assert!(matches!(problem.patch_measure(&p, &pt(&[0.0], 1.0)), Err(MeasureError::EmptyPatch { .. })));
    }
}
