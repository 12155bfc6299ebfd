use super::{Excluded, VerifyError, FIT_FLOOR};
use crate::discretize::CoefficientField;
use crate::geometry::{distance, patch, DomainSpec, SpaceTimePoint};
use crate::measure::{auto_extent, Problem, SolveOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingCell {
    pub x: Vec<f64>,
    pub t: f64,
    pub r: f64,
    pub small: f64,
    pub large: f64,
    pub ratio: f64,
}

/// Ratios `ω^X(Δ_2r)/ω^X(Δ_r)` over a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub anchor: SpaceTimePoint,
    pub cells: Vec<DoublingCell>,
    pub excluded: Vec<Excluded>,
    pub max_ratio: f64,
    pub argmax: Option<usize>,
    pub k: f64,
    pub lambda: Option<f64>,
    pub grid_id: String,
    /// Largest artificial-boundary mass seen by any backward solve.
    pub artificial_mass: f64,
}

impl DoublingReport {
    fn finish(mut self) -> Self {
        self.argmax = None;
        self.max_ratio = f64::NAN;
        for (i, c) in self.cells.iter().enumerate() {
            if self.argmax.is_none() || c.ratio > self.max_ratio {
                self.max_ratio = c.ratio;
                self.argmax = Some(i);
            }
        }
        self
    }

    pub fn argmax_cell(&self) -> Option<&DoublingCell> {
        self.argmax.map(|i| &self.cells[i])
    }

    /// Ratio of the cell nearest to `(x, t, r)` within `tol` in each
    /// coordinate.
    pub fn ratio_at(&self, x: &[f64], t: f64, r: f64, tol: f64) -> Option<f64> {
        self.cells.iter().find(|c| distance(&c.x, x) <= tol && (c.t - t).abs() <= tol && (c.r - r).abs() <= 1e-12).map(|c| c.ratio)
    }

    /// The same sweep cut down to `|x - y| ≤ K√(t - s)`.
    pub fn restricted_to(&self, k: f64) -> Self {
        let s = self.anchor.t;
        let cells = self.cells.iter().filter(|c| distance(&c.x, &self.anchor.x) <= k * (c.t - s).sqrt() + 1e-12).cloned().collect();
        Self { cells, k, ..self.clone() }.finish()
    }
}

type Admit<'a> = dyn Fn(&SpaceTimePoint, f64) -> Result<(), String> + Sync + 'a;

fn sweep(
    problem: &Problem,
    anchor: &SpaceTimePoint,
    xs: &[SpaceTimePoint],
    r_list: &[f64],
    admit: &Admit<'_>,
) -> (Vec<DoublingCell>, Vec<Excluded>, f64) {
    let results: Vec<_> = xs
        .par_iter()
        .map(|x| {
            let mut cells = Vec::new();
            let mut excluded = Vec::new();
            let (node, level) = match problem.locate(x) {
                Ok(v) => v,
                Err(e) => {
                    excluded.push(Excluded::new(x, e.to_string()));
                    return (cells, excluded, 0.0);
                }
            };
            let snapped = SpaceTimePoint { x: problem.grid.coords(node), t: problem.grid.time(level) };
            let mut radii = Vec::new();
            for &r in r_list {
                match admit(&snapped, r) {
                    Ok(()) => radii.push(r),
                    Err(why) => excluded.push(Excluded::new(format!("{snapped} r={r}"), why)),
                }
            }
            if radii.is_empty() {
                return (cells, excluded, 0.0);
            }
            let m = match problem.measure(&snapped, 0, &[]) {
                Ok(m) => m,
                Err(e) => {
                    excluded.push(Excluded::new(&snapped, e.to_string()));
                    return (cells, excluded, 0.0);
                }
            };
            let mut both: Vec<f64> = radii.iter().flat_map(|&r| [r, 2.0 * r]).collect();
            both.sort_by(f64::total_cmp);
            let prof = m.profile(&problem.grid, anchor, &both);
            let at = |r: f64| prof.iter().find(|p| p.0 == r).map(|p| p.1).unwrap_or(0.0);
            for &r in &radii {
                let (small, large) = (at(r), at(2.0 * r));
                if small <= FIT_FLOOR {
                    excluded.push(Excluded::new(format!("{snapped} r={r}"), format!("denominator {small:e} below the round-off floor")));
                    continue;
                }
                cells.push(DoublingCell { x: snapped.x.clone(), t: snapped.t, r, small, large, ratio: large / small });
            }
            (cells, excluded, m.artificial_total())
        })
        .collect();
    let mut cells = Vec::new();
    let mut excluded = Vec::new();
    let mut art: f64 = 0.0;
    for (c, e, a) in results {
        cells.extend(c);
        excluded.extend(e);
        art = art.max(a);
    }
    (cells, excluded, art)
}

/// `count` points with `|x| ≤ K√t`: evenly spaced on `[-K√t, K√t]` in one
/// dimension; the origin plus a golden-angle spiral otherwise.
pub fn whole_space_points(n: usize, k: f64, t: f64, count: usize) -> Vec<SpaceTimePoint> {
    let reach = k * t.sqrt();
    let mut out = Vec::with_capacity(count);
    if count <= 1 {
        return vec![SpaceTimePoint { x: vec![0.0; n], t }];
    }
    for j in 0..count {
        let f = j as f64 / (count - 1) as f64;
        let x = if n == 1 {
            vec![-reach + 2.0 * reach * f]
        } else {
            let angle = j as f64 * std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let mut v = vec![0.0; n];
            v[0] = reach * f * angle.cos();
            v[1] = reach * f * angle.sin();
            v
        };
        out.push(SpaceTimePoint { x, t });
    }
    out
}

/// Doubling sweep for the whole space with anchor at the origin, over
/// `X = (x, t)`, `|x| ≤ K√t`, `t ∈ t_list`.
pub fn doubling_sweep_wholespace(
    field: &CoefficientField,
    k: f64,
    r_list: &[f64],
    t_list: &[f64],
    x_per_t: usize,
    opts: &SolveOptions,
) -> Result<DoublingReport, VerifyError> {
    if !(k >= 1.0) || r_list.iter().chain(t_list).any(|v| !(*v > 0.0)) {
        return Err(VerifyError::Precondition("need K >= 1 and positive r, t".into()));
    }
    let n = field.dim();
    let domain = DomainSpec::whole_space(n);
    let anchor = SpaceTimePoint { x: vec![0.0; n], t: 0.0 };
    let r_max = r_list.iter().cloned().fold(0.0, f64::max);
    let mut report = DoublingReport {
        anchor: anchor.clone(),
        cells: Vec::new(),
        excluded: Vec::new(),
        max_ratio: f64::NAN,
        argmax: None,
        k,
        lambda: None,
        grid_id: String::new(),
        artificial_mass: 0.0,
    };
    for &t in t_list {
        let xs = whole_space_points(n, k, t, x_per_t);
        let reach: Vec<f64> = (0..n).map(|_| 2.0 * r_max).collect();
        let neg: Vec<f64> = reach.iter().map(|v| -v).collect();
        let mut pts: Vec<&[f64]> = xs.iter().map(|p| p.x.as_slice()).collect();
        pts.push(&reach);
        pts.push(&neg);
        let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&pts, t, 1.0, field.nu));
        let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
        let admit = move |x: &SpaceTimePoint, _r: f64| {
            let norm = x.x.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm <= k * x.t.sqrt() + 1e-12 {
                Ok(())
            } else {
                Err(format!("|x| = {norm} exceeds K√t after snapping"))
            }
        };
        let (cells, excluded, art) = sweep(&problem, &anchor, &xs, r_list, &admit);
        report.cells.extend(cells);
        report.excluded.extend(excluded);
        report.artificial_mass = report.artificial_mass.max(art);
        report.grid_id = problem.grid_id().to_string();
    }
    Ok(report.finish())
}

/// Candidate points for the Lipschitz sweep: `√(t - s)` runs half-dyadically
/// from `4 r_min` to `λ r₀`, and `x - y` takes fractions of `K√(t - s)`
/// along the inward axis (and its tilt toward `e_1` in the plane).
pub fn lipschitz_points(domain: &DomainSpec, y: &SpaceTimePoint, k: f64, lambda: f64, r_min: f64) -> Vec<SpaceTimePoint> {
    let n = domain.dim();
    let (_, r0) = domain.lipschitz_constants();
    let mut dirs = vec![{
        let mut e = vec![0.0; n];
        e[n - 1] = 1.0;
        e
    }];
    if n >= 2 {
        let mut e = vec![0.0; n];
        e[0] = std::f64::consts::FRAC_1_SQRT_2;
        e[n - 1] = std::f64::consts::FRAC_1_SQRT_2;
        dirs.push(e);
    }
    let mut out = Vec::new();
    for root in super::half_dyadic(4.0 * r_min, lambda * r0.min(1e6)) {
        for f in [0.05, 0.25, 0.5, 1.0] {
            for e in &dirs {
                let x: Vec<f64> = y.x.iter().zip(e).map(|(a, b)| a + f * k * root * b).collect();
                if domain.contains_unchecked(&x) {
                    out.push(SpaceTimePoint { x, t: y.t + root * root });
                }
            }
        }
    }
    out
}

/// Doubling sweep at a boundary anchor `Y` of a Lipschitz cylinder, keeping
/// only cells with `4r ≤ √(t - s) ≤ λr₀` and `|x - y| ≤ K√(t - s)`.
#[allow(clippy::too_many_arguments)]
pub fn doubling_sweep_lipschitz(
    domain: &DomainSpec,
    field: &CoefficientField,
    y: &SpaceTimePoint,
    k: f64,
    lambda: f64,
    r_list: &[f64],
    xs: &[SpaceTimePoint],
    opts: &SolveOptions,
) -> Result<DoublingReport, VerifyError> {
    let (_, r0) = domain.lipschitz_constants();
    for &r in r_list {
        if !(r > 0.0 && r <= lambda * r0 / 4.0 + 1e-12) {
            return Err(VerifyError::Precondition(format!("r = {r} outside (0, λr₀/4]")));
        }
        patch(domain, y, r)?;
    }
    if xs.is_empty() {
        return Err(VerifyError::Precondition("no sample points".into()));
    }
    let t_max = xs.iter().map(|p| p.t).fold(y.t, f64::max);
    let mut pts: Vec<&[f64]> = xs.iter().map(|p| p.x.as_slice()).collect();
    pts.push(&y.x);
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&pts, t_max - y.t.min(0.0), 1.0, field.nu));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let yy = y.clone();
    let admit = move |x: &SpaceTimePoint, r: f64| {
        let dt = x.t - yy.t;
        if dt <= 0.0 {
            return Err("X is not later than Y".to_string());
        }
        let root = dt.sqrt();
        if 4.0 * r > root + 1e-12 {
            return Err(format!("4r = {} exceeds √(t-s) = {root}", 4.0 * r));
        }
        if root > lambda * r0 + 1e-12 {
            return Err(format!("√(t-s) = {root} exceeds λr₀ = {}", lambda * r0));
        }
        let d = distance(&x.x, &yy.x);
        if d > k * root + 1e-12 {
            return Err(format!("|x-y| = {d} exceeds K√(t-s)"));
        }
        Ok(())
    };
    let (cells, excluded, art) = sweep(&problem, y, xs, r_list, &admit);
    Ok(DoublingReport {
        anchor: y.clone(),
        cells,
        excluded,
        max_ratio: f64::NAN,
        argmax: None,
        k,
        lambda: Some(lambda),
        grid_id: problem.grid_id().into(),
        artificial_mass: art,
    }
    .finish())
}

/// Doubling ratio on a bounded domain at the earliest admissible time
/// `√(t - s) = 4r`, above the point `center`, for growing `r`. Used to watch
/// the constant blow up once `r` exceeds the domain scale.
pub fn bounded_doubling_growth(
    domain: &DomainSpec,
    field: &CoefficientField,
    y: &SpaceTimePoint,
    center: &[f64],
    r_list: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<(f64, f64)>, VerifyError> {
    let mut out = Vec::new();
    for &r in r_list {
        let x = SpaceTimePoint { x: center.to_vec(), t: y.t + 16.0 * r * r };
        let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[center, &y.x], x.t, 1.0, field.nu));
        let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
        let m = problem.measure(&x, 0, &[])?;
        let prof = m.profile(&problem.grid, y, &[r, 2.0 * r]);
        if prof[0].1 <= FIT_FLOOR {
            return Err(VerifyError::Underflow { value: prof[0].1, floor: FIT_FLOOR });
        }
        out.push((r, prof[1].1 / prof[0].1));
    }
    Ok(out)
}
