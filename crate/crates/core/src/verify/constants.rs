use super::lemmas::{ball_nodes, level_range};
use super::{ConstantReport, Excluded, RandomData, VerifyError, FIT_FLOOR};
use crate::discretize::{CoefficientField, Extent, Form};
use crate::geometry::{distance, patch, DomainSpec, ShrunkenSet, SpaceTimePoint};
use crate::measure::{auto_extent, bottom_data, BoundaryData, Constant, Problem, SolveOptions};
use serde::{Deserialize, Serialize};

fn box_diameter(domain: &DomainSpec) -> Result<f64, VerifyError> {
    match domain {
        DomainSpec::Box { sides, .. } => Ok(sides.iter().map(|s| s * s).sum::<f64>().sqrt()),
        _ => Err(VerifyError::Precondition("this experiment needs a bounded (box) domain".into())),
    }
}

fn interior_nodes(problem: &Problem, domain: &DomainSpec, delta: f64, stride: usize) -> Vec<usize> {
    let grid = &problem.grid;
    grid.active()
        .iter()
        .copied()
        .filter(|&i| {
            let x = grid.coords(i);
            let on_lattice = x.iter().all(|c| ((c / grid.h).round() as i64).rem_euclid(stride as i64) == 0);
            on_lattice && domain.boundary_distance(&x).map(|d| d >= delta * (1.0 - 1e-12)).unwrap_or(false)
        })
        .collect()
}

/// `N̂ = max u(Y)/u(X)` over nonnegative data draws and pairs `X, Y ∈ Q^δ`
/// (distance at least `δ` to `∂Ω`, time at least `δ²`) with
/// `t - s ≥ δ²`. Draw 0 is `u ≡ 1`; the rest are random cell data in
/// `[0, 1]` on the bottom and the lateral boundary.
#[allow(clippy::too_many_arguments)]
pub fn harnack_constant(
    domain: &DomainSpec,
    field: &CoefficientField,
    delta: f64,
    lambda: f64,
    t_max: f64,
    draws: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<ConstantReport, VerifyError> {
    let diam = box_diameter(domain)?;
    if diam / delta > lambda + 1e-12 || t_max / (delta * delta) > lambda + 1e-12 {
        return Err(VerifyError::Precondition(format!(
            "need diam/δ = {} and T/δ² = {} at most λ = {lambda}",
            diam / delta,
            t_max / (delta * delta)
        )));
    }
    let extent = opts.extent.clone().unwrap_or_else(|| Extent::cube(domain.dim(), 0.0));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let grid = &problem.grid;
    let stride = ((delta / (4.0 * grid.h)).round() as usize).max(1);
    let nodes = interior_nodes(&problem, domain, delta, stride);
    let first = grid.level_of(delta * delta);
    let step = grid.level_of(delta * delta / 4.0).max(1);
    let levels: Vec<usize> = (first..=grid.level_of(t_max)).step_by(step).collect();
    if nodes.is_empty() || levels.is_empty() {
        return Err(VerifyError::Precondition("Q^δ has no grid points".into()));
    }
    let gap = grid.level_of(delta * delta);
    let mut rep = ConstantReport::new("harnack", grid.id())
        .param("delta", delta)
        .param("lambda", lambda)
        .param("T", t_max)
        .param("draws", draws as f64);
    rep.constant = f64::NEG_INFINITY;
    for d in 0..draws.max(1) {
        let random = RandomData::new(seed.wrapping_add(d as u64), delta / 2.0, 0.0, 1.0);
        let data: &dyn BoundaryData = if d == 0 { &Constant(1.0) } else { &random };
        let mut table: Vec<Vec<f64>> = Vec::with_capacity(levels.len());
        problem.march(data, *levels.last().unwrap(), &mut |level, u| {
            if level >= first && (level - first) % step == 0 {
                table.push(nodes.iter().map(|&i| u[i]).collect());
            }
        })?;
        // Running maximum of u(Y) over all earlier admissible levels.
        let mut best_y = (f64::NEG_INFINITY, 0usize, 0usize);
        let mut a = 0;
        for (b, &lb) in levels.iter().enumerate() {
            while a < levels.len() && levels[a] + gap <= lb {
                for (j, &v) in table[a].iter().enumerate() {
                    if v > best_y.0 {
                        best_y = (v, levels[a], nodes[j]);
                    }
                }
                a += 1;
            }
            if a == 0 {
                continue;
            }
            for (j, &ux) in table[b].iter().enumerate() {
                if ux <= FIT_FLOOR {
                    rep.excluded.push(Excluded::new(format!("draw {d} node {}", nodes[j]), "u(X) below the floor"));
                    continue;
                }
                let ratio = best_y.0 / ux;
                if ratio > rep.constant {
                    rep.constant = ratio;
                    rep.argmax = format!(
                        "draw {d}: Y = {}, X = {}",
                        SpaceTimePoint { x: grid.coords(best_y.2), t: grid.time(best_y.1) },
                        SpaceTimePoint { x: grid.coords(nodes[j]), t: grid.time(lb) }
                    );
                }
            }
        }
    }
    Ok(rep)
}

/// Backward-in-time comparison at a fixed point: `constant` is the largest
/// `u(x, t + r²)/u(x, t - r²)` over bottom-only data draws. The reciprocal
/// range is kept as `extra["earlier_over_later_min"]` and `[".._max"]`;
/// for the first Dirichlet mode on `[0, 1]` both equal `e^{2π²r²}`. Draw 0
/// is `u = 1` on the bottom.
#[allow(clippy::too_many_arguments)]
pub fn backward_harnack(
    domain: &DomainSpec,
    field: &CoefficientField,
    x: &[f64],
    t: f64,
    r: f64,
    delta: f64,
    draws: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<ConstantReport, VerifyError> {
    let random: Vec<RandomData> = (1..draws.max(1))
        .map(|d| RandomData { lateral: false, ..RandomData::new(seed.wrapping_add(d as u64), delta / 2.0, 0.0, 1.0) })
        .collect();
    let unit = bottom_data(|_: &[f64]| 1.0);
    let mut data: Vec<&dyn BoundaryData> = vec![&unit];
    data.extend(random.iter().map(|d| d as &dyn BoundaryData));
    backward_harnack_with(domain, field, x, t, r, delta, &data, opts)
}

/// As [`backward_harnack`] over caller-supplied bottom data.
#[allow(clippy::too_many_arguments)]
pub fn backward_harnack_with(
    domain: &DomainSpec,
    field: &CoefficientField,
    x: &[f64],
    t: f64,
    r: f64,
    delta: f64,
    data: &[&dyn BoundaryData],
    opts: &SolveOptions,
) -> Result<ConstantReport, VerifyError> {
    let (_, r0) = domain.lipschitz_constants();
    let mu = domain.corkscrew_mu();
    if !(t > delta * delta) {
        return Err(VerifyError::Precondition(format!("t = {t} must exceed δ² = {}", delta * delta)));
    }
    if !(r > 0.0 && r <= 0.5 * r0.min(delta) + 1e-12) {
        return Err(VerifyError::Precondition(format!("r = {r} outside (0, min(r₀, δ)/2]")));
    }
    let dist = domain.boundary_distance(x)?;
    if dist <= mu * r {
        return Err(VerifyError::Precondition(format!("dist(x, ∂Ω) = {dist} is not above μr = {}", mu * r)));
    }
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[x], t + r * r, 1.0, field.nu));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let (node, _) = problem.locate(&SpaceTimePoint { x: x.to_vec(), t })?;
    let early = problem.grid.level_of(t - r * r);
    let late = problem.grid.level_of(t + r * r);
    let mut rep = ConstantReport::new("backward_harnack", problem.grid_id()).param("t", t).param("r", r).param("delta", delta);
    rep.constant = f64::NEG_INFINITY;
    let (mut back_min, mut back_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (d, phi) in data.iter().enumerate() {
        let mut before = f64::NAN;
        let after = problem.march(*phi, late, &mut |level, u| {
            if level == early {
                before = u[node];
            }
        })?[node];
        if after <= FIT_FLOOR || before <= FIT_FLOOR {
            rep.excluded.push(Excluded::new(format!("draw {d}"), "solution below the floor"));
            continue;
        }
        if after / before > rep.constant {
            rep.constant = after / before;
            rep.argmax = format!("draw {d}");
        }
        back_min = back_min.min(before / after);
        back_max = back_max.max(before / after);
    }
    if rep.constant == f64::NEG_INFINITY {
        return Err(VerifyError::Underflow { value: 0.0, floor: FIT_FLOOR });
    }
    rep.extra.insert("earlier_over_later_min".into(), back_min);
    rep.extra.insert("earlier_over_later_max".into(), back_max);
    rep.extra.insert("t_early".into(), problem.grid.time(early));
    rep.extra.insert("t_late".into(), problem.grid.time(late));
    Ok(rep)
}

fn slice_nodes(problem: &Problem, domain: &DomainSpec, y: &[f64], rho: f64, closed: bool) -> Vec<usize> {
    let set = ShrunkenSet::corkscrew_slice(domain, y, rho);
    let grid = &problem.grid;
    grid.active()
        .iter()
        .copied()
        .filter(|&i| {
            let x = grid.coords(i);
            if closed {
                set.closure_contains(&x)
            } else {
                set.contains(&x)
            }
        })
        .collect()
}

/// Smallest `N̂` with
/// `sup_{Q_{Kr,r}(Y)} v/u ≤ N̂ · inf_{Ω_2r^+} v / sup_{Ω_2r^-} u`.
#[allow(clippy::too_many_arguments)]
pub fn quotient_bound(
    domain: &DomainSpec,
    field: &CoefficientField,
    y: &SpaceTimePoint,
    k: f64,
    r: f64,
    data_u: &dyn BoundaryData,
    data_v: &dyn BoundaryData,
    opts: &SolveOptions,
) -> Result<ConstantReport, VerifyError> {
    let (_, r0) = domain.lipschitz_constants();
    if !(r > 0.0 && r <= r0 / 4.0 + 1e-12) {
        return Err(VerifyError::Precondition(format!("r = {r} outside (0, r₀/4]")));
    }
    if y.t < 5.0 * r * r {
        return Err(VerifyError::Precondition(format!("s = {} below 5r² = {}", y.t, 5.0 * r * r)));
    }
    patch(domain, y, r)?;
    let top = y.t + 4.0 * r * r;
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[&y.x], top, 1.0, field.nu).widened((k + 2.0) * r));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let grid = &problem.grid;
    // Both data sets must vanish on the lateral window C_{(K+2)r,2r}(Y).
    for &b in grid.lateral() {
        let xb = grid.coords(b);
        if distance(&xb, &y.x) >= (k + 2.0) * r {
            continue;
        }
        for l in level_range(&problem, y.t - 4.0 * r * r, top, false) {
            let t = grid.time(l);
            if data_u.lateral(&xb, t) != 0.0 || data_v.lateral(&xb, t) != 0.0 {
                return Err(VerifyError::Precondition(format!("data does not vanish on the lateral window at ({xb:?}, {t})")));
            }
        }
    }
    let window = ball_nodes(&problem, &y.x, k * r, true);
    let levels = level_range(&problem, y.t - r * r, y.t + r * r, true);
    let minus = slice_nodes(&problem, domain, &y.x, 2.0 * r, true);
    let plus = minus.clone();
    let (l_minus, l_plus) = (grid.level_of(y.t - 4.0 * r * r), grid.level_of(top));
    if window.is_empty() || minus.is_empty() {
        return Err(VerifyError::Precondition("evaluation sets have no grid points".into()));
    }
    let run = |data: &dyn BoundaryData| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), VerifyError> {
        let mut win = Vec::new();
        let (mut at_minus, mut at_plus) = (Vec::new(), Vec::new());
        problem.march(data, l_plus, &mut |level, u| {
            if levels.contains(&level) {
                win.extend(window.iter().map(|&i| u[i]));
            }
            if level == l_minus {
                at_minus = minus.iter().map(|&i| u[i]).collect();
            }
            if level == l_plus {
                at_plus = plus.iter().map(|&i| u[i]).collect();
            }
        })?;
        Ok((win, at_minus, at_plus))
    };
    let (u_win, u_minus, _) = run(data_u)?;
    let (v_win, _, v_plus) = run(data_v)?;
    let mut rep = ConstantReport::new("quotient_bound", grid.id()).param("K", k).param("r", r);
    let mut sup_q = (f64::NEG_INFINITY, 0usize);
    for (j, (&u, &v)) in u_win.iter().zip(&v_win).enumerate() {
        if u <= FIT_FLOOR {
            rep.excluded.push(Excluded::new(format!("window sample {j}"), "u vanishes"));
            continue;
        }
        if v / u > sup_q.0 {
            sup_q = (v / u, j);
        }
    }
    let sup_u = u_minus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let inf_v = v_plus.iter().cloned().fold(f64::INFINITY, f64::min);
    if inf_v <= FIT_FLOOR {
        return Err(VerifyError::Underflow { value: inf_v, floor: FIT_FLOOR });
    }
    let per_level = window.len();
    let (lj, nj) = (sup_q.1 / per_level, sup_q.1 % per_level);
    rep.constant = sup_q.0 * sup_u / inf_v;
    rep.argmax = SpaceTimePoint { x: grid.coords(window[nj]), t: grid.time(*levels.start() + lj) }.to_string();
    rep.extra.insert("sup_v_over_u".into(), sup_q.0);
    rep.extra.insert("sup_u_minus".into(), sup_u);
    rep.extra.insert("inf_v_plus".into(), inf_v);
    Ok(rep)
}

/// Two-sided Gaussian envelope of a kernel sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AronsonReport {
    /// Smallest `N` with `N⁻¹ e^{-N d²} ≤ Γ`.
    pub n_lower: f64,
    /// Smallest `N` with `Γ ≤ N e^{-d²/N}`.
    pub n_upper: f64,
    pub passed: bool,
    /// `(|x - y|², Γ)`.
    pub samples: Vec<(f64, f64)>,
    pub grid_id: String,
}

const ENVELOPE_CAP: f64 = 1e6;

fn smallest_n(ok: impl Fn(f64) -> bool) -> f64 {
    if ok(1.0) {
        return 1.0;
    }
    if !ok(ENVELOPE_CAP) {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (1.0f64, ENVELOPE_CAP);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    hi
}

/// `(N_lower, N_upper)` for samples `(d², Γ)`; both feasibility sets are
/// up-closed in `N`, so bisection finds the smallest admissible values.
pub fn fit_envelope(samples: &[(f64, f64)]) -> (f64, f64) {
    let lower = smallest_n(|n| samples.iter().all(|&(d2, g)| g > 0.0 && -n.ln() - n * d2 <= g.ln()));
    let upper = smallest_n(|n| samples.iter().all(|&(d2, g)| g.ln() <= n.ln() - d2 / n));
    (lower, upper)
}

/// Discrete kernel `Γ(x, t; 0, 0)` over `|x| ≤ radius` and its envelope.
/// Refuses nondivergence fields.
pub fn aronson_sandwich(field: &CoefficientField, t_fixed: f64, radius: f64, opts: &SolveOptions) -> Result<AronsonReport, VerifyError> {
    if field.form != Form::Divergence {
        return Err(VerifyError::NonDivergence);
    }
    let n = field.dim();
    let origin = vec![0.0; n];
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[&origin], t_fixed, 1.0, field.nu).widened(radius));
    let problem = Problem::new(DomainSpec::whole_space(n), field.clone(), &opts.grid, &extent)?;
    let grid = &problem.grid;
    let y = problem.grid.nearest_node(&origin).ok_or_else(|| VerifyError::Precondition("origin off grid".into()))?;
    let mut start = vec![0.0; grid.node_count()];
    start[y] = grid.h.powi(-(n as i32));
    let u = problem.march_from(0, start, &Constant(0.0), grid.level_of(t_fixed), &mut |_, _| {})?;
    let samples: Vec<(f64, f64)> = ball_nodes(&problem, &origin, radius, true)
        .into_iter()
        .map(|i| {
            let x = grid.coords(i);
            (x.iter().map(|c| c * c).sum::<f64>(), u[i])
        })
        .collect();
    let (n_lower, n_upper) = fit_envelope(&samples);
    Ok(AronsonReport { n_lower, n_upper, passed: n_lower.is_finite() && n_upper.is_finite(), samples, grid_id: grid.id().into() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenMeasureRow {
    pub rho: f64,
    pub omega: f64,
    pub y_plus: SpaceTimePoint,
    pub y_minus: Option<SpaceTimePoint>,
    pub g_plus: f64,
    pub g_minus: Option<f64>,
    /// `ω/(ρⁿ G(X; Y_ρ^+))`, bounded below by `N⁻¹`.
    pub ratio_plus: f64,
    /// `ω/(ρⁿ G(X; Y_ρ^-))`, bounded above by `N`.
    pub ratio_minus: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenMeasureReport {
    pub rows: Vec<GreenMeasureRow>,
    /// `max(1/min ratio⁺, max ratio⁻)`.
    pub constant: f64,
    pub excluded: Vec<Excluded>,
    pub grid_id: String,
}

/// Tabulates `ω^X(Δ_ρ(Y))` against `ρⁿ G(X; Y_ρ^±)` with `Y_ρ^±` the
/// interior corkscrew point at times `s ± ρ²`, all from one backward solve.
pub fn green_measure_comparison(
    domain: &DomainSpec,
    field: &CoefficientField,
    y: &SpaceTimePoint,
    rho_list: &[f64],
    x: &SpaceTimePoint,
    opts: &SolveOptions,
) -> Result<GreenMeasureReport, VerifyError> {
    let (_, r0) = domain.lipschitz_constants();
    let n = domain.dim();
    let mut excluded = Vec::new();
    let mut plan = Vec::new();
    for &rho in rho_list {
        if !(rho > 0.0 && rho <= r0 / 2.0 + 1e-12) {
            return Err(VerifyError::Precondition(format!("ρ = {rho} outside (0, r₀/2]")));
        }
        if x.t <= y.t + rho * rho {
            return Err(VerifyError::Measure(crate::measure::MeasureError::TimeOrder(format!(
                "X.t = {} not after s + ρ² = {}",
                x.t,
                y.t + rho * rho
            ))));
        }
        let c = domain.corkscrew(&y.x, rho)?;
        plan.push((rho, c.interior));
    }
    let mut pts: Vec<&[f64]> = vec![&x.x, &y.x];
    pts.extend(plan.iter().map(|p| p.1.as_slice()));
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&pts, x.t, 1.0, field.nu));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let grid = &problem.grid;
    let mut snaps = Vec::new();
    for (rho, _) in &plan {
        snaps.push(grid.level_of(y.t + rho * rho));
        if y.t - rho * rho >= 0.0 {
            snaps.push(grid.level_of(y.t - rho * rho));
        }
    }
    let m = problem.measure(x, 0, &snaps)?;
    let radii: Vec<f64> = plan.iter().map(|p| p.0).collect();
    let mut sorted = radii.clone();
    sorted.sort_by(f64::total_cmp);
    let prof = m.profile(grid, y, &sorted);
    let mut rows = Vec::new();
    for (rho, centre) in &plan {
        let omega = prof.iter().find(|p| p.0 == *rho).map(|p| p.1).unwrap_or(0.0);
        let node = match grid.nearest_node(centre).filter(|&i| grid.kind(i) == crate::discretize::NodeKind::Active) {
            Some(i) => i,
            None => {
                excluded.push(Excluded::new(format!("ρ = {rho}"), "corkscrew point is not an active node"));
                continue;
            }
        };
        let g_at = |t: f64| m.green_at(grid, grid.level_of(t), node);
        let t_plus = y.t + rho * rho;
        let g_plus = g_at(t_plus).unwrap_or(0.0);
        let snapped = grid.coords(node);
        let (y_minus, g_minus) = if y.t - rho * rho >= 0.0 {
            let t = y.t - rho * rho;
            (Some(SpaceTimePoint { x: snapped.clone(), t: grid.time(grid.level_of(t)) }), g_at(t))
        } else {
            excluded.push(Excluded::new(format!("ρ = {rho}"), "Y_ρ^- lies below the bottom"));
            (None, None)
        };
        let scale = rho.powi(n as i32);
        if g_plus <= FIT_FLOOR {
            excluded.push(Excluded::new(format!("ρ = {rho}"), "G(X; Y_ρ^+) below the floor"));
            continue;
        }
        rows.push(GreenMeasureRow {
            rho: *rho,
            omega,
            y_plus: SpaceTimePoint { x: snapped.clone(), t: grid.time(grid.level_of(t_plus)) },
            y_minus,
            g_plus,
            g_minus,
            ratio_plus: omega / (scale * g_plus),
            ratio_minus: g_minus.filter(|g| *g > FIT_FLOOR).map(|g| omega / (scale * g)),
        });
    }
    let lower = rows.iter().map(|r| r.ratio_plus).fold(f64::INFINITY, f64::min);
    let upper = rows.iter().filter_map(|r| r.ratio_minus).fold(0.0, f64::max);
    let constant = (1.0 / lower).max(upper).max(1.0);
    Ok(GreenMeasureReport { rows, constant, excluded, grid_id: grid.id().into() })
}

/// Data 1 on a restart slice (restricted to `keep`) and 0 on the lateral
/// boundary; the artificial boundary holds `artificial`.
struct Restart {
    artificial: f64,
}

impl BoundaryData for Restart {
    fn bottom(&self, _: &[f64]) -> f64 {
        0.0
    }
    fn lateral(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
    fn artificial(&self, _: &[f64]) -> f64 {
        self.artificial
    }
}

/// `N̂₁ = max ω^X(Ω × {s + ρ²}) / ω^X(Ω_ρ^+)` over grid points
/// `X ∈ Ω_{2Kρ}(y) × {s + 4ρ²}`, both measures from restart solves that
/// start on the slice `t = s + ρ²` (snapped to the time grid).
pub fn interior_measure_domination(
    domain: &DomainSpec,
    field: &CoefficientField,
    y: &SpaceTimePoint,
    rho: f64,
    k: f64,
    lambda: f64,
    opts: &SolveOptions,
) -> Result<ConstantReport, VerifyError> {
    if matches!(domain, DomainSpec::WholeSpace { .. }) {
        return Err(VerifyError::Precondition("needs a domain with a lateral boundary".into()));
    }
    let (_, r0) = domain.lipschitz_constants();
    if !(rho > 0.0 && 2.0 * rho <= lambda * r0 + 1e-12) {
        return Err(VerifyError::Precondition(format!("need 0 < 2ρ ≤ λr₀, got ρ = {rho}")));
    }
    patch(domain, y, rho)?;
    let reach = 2.0 * k * rho;
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[&y.x], y.t + 4.0 * rho * rho, 1.0, field.nu).widened(reach));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let grid = &problem.grid;
    let start = grid.level_of(y.t + rho * rho);
    let end = grid.level_of(y.t + 4.0 * rho * rho);
    let keep = slice_nodes(&problem, domain, &y.x, rho, false);
    let targets = ball_nodes(&problem, &y.x, reach, false);
    if keep.is_empty() || targets.is_empty() {
        return Err(VerifyError::Precondition("slice sets have no grid points".into()));
    }
    let mut whole = vec![0.0; grid.node_count()];
    for &i in grid.active() {
        whole[i] = 1.0;
    }
    for &b in grid.artificial() {
        whole[b] = 1.0;
    }
    let mut part = vec![0.0; grid.node_count()];
    for &i in &keep {
        part[i] = 1.0;
    }
    let a = problem.march_from(start, whole, &Restart { artificial: 1.0 }, end, &mut |_, _| {})?;
    let b = problem.march_from(start, part, &Restart { artificial: 0.0 }, end, &mut |_, _| {})?;
    let mut rep = ConstantReport::new("interior_measure_domination", grid.id()).param("rho", rho).param("K", k).param("lambda", lambda);
    rep.constant = f64::NEG_INFINITY;
    rep.extra.insert("slice_time".into(), grid.time(start));
    rep.extra.insert("target_time".into(), grid.time(end));
    for &i in &targets {
        if b[i] <= FIT_FLOOR {
            rep.excluded.push(Excluded::new(format!("{:?}", grid.coords(i)), "ω^X(Ω_ρ^+) below the floor"));
            continue;
        }
        let ratio = a[i] / b[i];
        if ratio > rep.constant {
            rep.constant = ratio;
            rep.argmax = SpaceTimePoint { x: grid.coords(i), t: grid.time(end) }.to_string();
        }
    }
    Ok(rep)
}
