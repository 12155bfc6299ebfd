use super::{half_dyadic, ConstantReport, Excluded, ExponentFit, RandomData, VerifyError, FIT_FLOOR, ROUND_OFF_FLOOR};
use crate::discretize::CoefficientField;
use crate::geometry::{distance, patch, DomainSpec, ShrunkenSet, SpaceTimePoint};
use crate::measure::{auto_extent, BoundaryData, Indicator, Problem, SolveOptions};
use serde::{Deserialize, Serialize};

fn lipschitz_radius_check(domain: &DomainSpec, r: f64, bound: f64, what: &str) -> Result<(), VerifyError> {
    if !(r > 0.0) {
        return Err(VerifyError::Precondition(format!("{what} = {r} must be positive")));
    }
    if !matches!(domain, DomainSpec::WholeSpace { .. }) {
        let (_, r0) = domain.lipschitz_constants();
        if r > bound * r0 + 1e-12 {
            return Err(VerifyError::Precondition(format!("{what} = {r} exceeds {bound}·r₀ = {}", bound * r0)));
        }
    }
    Ok(())
}

/// Active nodes within `radius` of `y` (closed ball when `closed`).
pub(crate) fn ball_nodes(problem: &Problem, y: &[f64], radius: f64, closed: bool) -> Vec<usize> {
    let grid = &problem.grid;
    let mut x = vec![0.0; grid.n];
    grid.active()
        .iter()
        .copied()
        .filter(|&i| {
            grid.coords_into(i, &mut x);
            let d = distance(&x, y);
            if closed {
                d <= radius * (1.0 + 1e-12)
            } else {
                d < radius
            }
        })
        .collect()
}

/// Levels `ℓ ≥ 1` with `lo < t_ℓ < hi` (`hi` included when `closed_top`).
pub(crate) fn level_range(problem: &Problem, lo: f64, hi: f64, closed_top: bool) -> std::ops::RangeInclusive<usize> {
    let tau = problem.grid.tau;
    let eps = 1e-9 * tau;
    let first = ((lo.max(0.0) + eps) / tau).floor() as usize + 1;
    let last = if closed_top { ((hi + eps) / tau).floor() as usize } else { ((hi - eps) / tau).ceil() as usize - 1 };
    first.max(1)..=last
}

/// `inf ω^X(Δ_2r(Y))` over grid points `X` of `Q_r(Y)` (closed ball in
/// space, times in `(s - r², s + r²]`); the reported constant is its
/// reciprocal.
pub fn bottom_lower_bound(
    domain: &DomainSpec,
    field: &CoefficientField,
    y: &SpaceTimePoint,
    r: f64,
    opts: &SolveOptions,
) -> Result<ConstantReport, VerifyError> {
    lipschitz_radius_check(domain, r, 0.5, "r")?;
    let p = patch(domain, y, 2.0 * r)?;
    let top = y.t + r * r;
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[&y.x], top, 1.0, field.nu).widened(r));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let nodes = ball_nodes(&problem, &y.x, r, true);
    let levels = level_range(&problem, y.t - r * r, top, true);
    if nodes.is_empty() || levels.is_empty() {
        return Err(VerifyError::Precondition("Q_r(Y) contains no grid points".into()));
    }
    let mut inf = (f64::INFINITY, 0usize, 0usize);
    problem.march(&Indicator(&p), *levels.end(), &mut |level, u| {
        if levels.contains(&level) {
            for &i in &nodes {
                if u[i] < inf.0 {
                    inf = (u[i], i, level);
                }
            }
        }
    })?;
    let mut rep = ConstantReport::new("bottom_lower_bound", problem.grid_id()).param("r", r);
    rep.constant = 1.0 / inf.0;
    rep.argmax = SpaceTimePoint { x: problem.grid.coords(inf.1), t: problem.grid.time(inf.2) }.to_string();
    rep.extra.insert("infimum".into(), inf.0);
    Ok(rep)
}

/// `(sup u⁺, sup u⁻)` over the grid points of the closure of `Q_ρ(Y) ∩ Q`
/// for each `ρ`; the sups of a continuous `u` over the open cylinder are
/// attained there.
pub fn cylinder_sups(
    problem: &Problem,
    data: &dyn BoundaryData,
    y: &SpaceTimePoint,
    radii: &[f64],
) -> Result<Vec<(f64, f64)>, VerifyError> {
    let sets: Vec<(Vec<usize>, std::ops::RangeInclusive<usize>)> = radii
        .iter()
        .map(|&rho| (ball_nodes(problem, &y.x, rho, true), level_range(problem, y.t - rho * rho, y.t + rho * rho, true)))
        .collect();
    if sets.iter().any(|(n, l)| n.is_empty() || l.is_empty()) {
        return Err(VerifyError::Precondition("a cylinder has no grid points".into()));
    }
    let end = sets.iter().map(|(_, l)| *l.end()).max().unwrap_or(0);
    let mut sups = vec![(0.0f64, 0.0f64); radii.len()];
    problem.march(data, end, &mut |level, u| {
        for ((nodes, levels), s) in sets.iter().zip(sups.iter_mut()) {
            if levels.contains(&level) {
                for &i in nodes {
                    s.0 = s.0.max(u[i]);
                    s.1 = s.1.max(-u[i]);
                }
            }
        }
    })?;
    Ok(sups)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationDraw {
    pub seed: u64,
    pub sign: i8,
    pub sup_r: f64,
    pub sup_2r: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub theta_hat: f64,
    pub draws: Vec<OscillationDraw>,
    pub excluded: Vec<Excluded>,
    pub grid_id: String,
}

/// `θ̂ = max sup_{Q_r}(u±)/sup_{Q_2r}(u±)` over random data in `[-1, 1]`
/// that vanishes on `Δ_2r(Y)`.
pub fn oscillation_decay(
    domain: &DomainSpec,
    field: &CoefficientField,
    y: &SpaceTimePoint,
    r: f64,
    draws: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<OscillationReport, VerifyError> {
    lipschitz_radius_check(domain, r, 0.5, "r")?;
    let zero = patch(domain, y, 2.0 * r)?;
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[&y.x], y.t + 4.0 * r * r, 1.0, field.nu).widened(2.0 * r));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let mut out = OscillationReport { theta_hat: f64::NAN, draws: Vec::new(), excluded: Vec::new(), grid_id: problem.grid_id().into() };
    for d in 0..draws as u64 {
        let data = RandomData { zero_on: Some(zero.clone()), ..RandomData::new(seed.wrapping_add(d), r / 2.0, -1.0, 1.0) };
        let sups = cylinder_sups(&problem, &data, y, &[r, 2.0 * r])?;
        for (sign, num, den) in [(1i8, sups[0].0, sups[1].0), (-1, sups[0].1, sups[1].1)] {
            if den <= ROUND_OFF_FLOOR {
                out.excluded.push(Excluded::new(format!("draw {d} sign {sign}"), "sup over Q_2r is zero"));
                continue;
            }
            out.draws.push(OscillationDraw { seed: seed.wrapping_add(d), sign, sup_r: num, sup_2r: den, ratio: num / den });
        }
    }
    if out.draws.is_empty() {
        return Err(VerifyError::Underflow { value: 0.0, floor: ROUND_OFF_FLOOR });
    }
    out.theta_hat = out.draws.iter().map(|d| d.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(out)
}

/// Observation sets `B_ρ^+` (whole space) or `Ω_ρ^+` with margin
/// `μ·min(ρ, r₀)` (Lipschitz), all at time `s + ρ²`.
fn plus_slice(problem: &Problem, domain: &DomainSpec, y: &SpaceTimePoint, rho: f64) -> Vec<usize> {
    match domain {
        DomainSpec::WholeSpace { .. } => ball_nodes(problem, &y.x, rho, false),
        _ => {
            let (_, r0) = domain.lipschitz_constants();
            let set = ShrunkenSet { domain: domain.clone(), margin: domain.corkscrew_mu() * rho.min(r0), ball: Some((y.x.clone(), rho)) };
            let grid = &problem.grid;
            grid.active().iter().copied().filter(|&i| set.contains(&grid.coords(i))).collect()
        }
    }
}

impl ExponentFit {
    /// `f(ρ)·(ρ/ρ₀)^γ ≥ inf_{[ρ₀, 2ρ₀]} f` at every sample.
    pub fn growth_envelope_holds(&self, rho0: f64) -> bool {
        let base = self.samples.iter().filter(|(r, _)| *r <= 2.0 * rho0 * (1.0 + 1e-12)).map(|s| s.1).fold(f64::INFINITY, f64::min);
        self.samples.iter().all(|&(r, f)| f * (r / rho0).powf(self.exponent) >= base * (1.0 - 1e-12))
    }
}

/// Fits `γ₁` from `f₁(ρ) = inf u` over `B_ρ^+` or `Ω_ρ^+`, for `ρ` running
/// half-dyadically over `[ρ₀, R]`.
#[allow(clippy::too_many_arguments)]
pub fn growth_exponent(
    domain: &DomainSpec,
    field: &CoefficientField,
    data: &dyn BoundaryData,
    y: &SpaceTimePoint,
    rho0: f64,
    big_r: f64,
    opts: &SolveOptions,
) -> Result<ExponentFit, VerifyError> {
    growth_exponent_on(domain, field, data, y, &half_dyadic(rho0, big_r), opts)
}

/// As [`growth_exponent`] on an explicit ascending radius list.
pub fn growth_exponent_on(
    domain: &DomainSpec,
    field: &CoefficientField,
    data: &dyn BoundaryData,
    y: &SpaceTimePoint,
    radii: &[f64],
    opts: &SolveOptions,
) -> Result<ExponentFit, VerifyError> {
    let big_r = radii.last().copied().unwrap_or(0.0);
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[&y.x], y.t + big_r * big_r, 1.0, field.nu).widened(big_r));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let sets: Vec<(usize, Vec<usize>)> =
        radii.iter().map(|&rho| (problem.grid.level_of(y.t + rho * rho), plus_slice(&problem, domain, y, rho))).collect();
    if let Some(i) = sets.iter().position(|(_, s)| s.is_empty()) {
        return Err(VerifyError::Precondition(format!("observation slice at ρ = {} has no grid points", radii[i])));
    }
    let end = sets.iter().map(|s| s.0).max().unwrap_or(0);
    let mut f = vec![f64::INFINITY; radii.len()];
    problem.march(data, end, &mut |level, u| {
        for ((l, nodes), fi) in sets.iter().zip(f.iter_mut()) {
            if *l == level {
                *fi = nodes.iter().map(|&i| u[i]).fold(f64::INFINITY, f64::min);
            }
        }
    })?;
    if let Some(&neg) = f.iter().find(|v| **v < -1e-12) {
        return Err(VerifyError::Precondition(format!("u is not nonnegative on the region (min {neg})")));
    }
    let samples = radii.iter().copied().zip(f).collect();
    ExponentFit::fit(samples, (radii[0], big_r))
}

/// Data restricted to `C_{ρ₀/2}(Y)`.
struct Restricted<'a> {
    inner: &'a dyn BoundaryData,
    y: &'a SpaceTimePoint,
    half: f64,
}

impl Restricted<'_> {
    fn inside(&self, x: &[f64], t: f64) -> bool {
        distance(x, &self.y.x) < self.half && (t - self.y.t).abs() < self.half * self.half
    }
}

impl BoundaryData for Restricted<'_> {
    fn bottom(&self, x: &[f64]) -> f64 {
        if self.inside(x, 0.0) {
            self.inner.bottom(x)
        } else {
            0.0
        }
    }
    fn lateral(&self, x: &[f64], t: f64) -> f64 {
        if self.inside(x, t) {
            self.inner.lateral(x, t)
        } else {
            0.0
        }
    }
    fn artificial(&self, _: &[f64]) -> f64 {
        0.0
    }
}

/// `-1` on the bottom.
pub struct NegativeBottom;

impl BoundaryData for NegativeBottom {
    fn bottom(&self, _: &[f64]) -> f64 {
        -1.0
    }
    fn lateral(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
}

/// Fits `γ₂` from `f₂(ρ) = sup u⁻` over the lateral shells `S_ρ` of
/// `C_{Kρ,ρ}(Y)`, `ρ` half-dyadic in `[2ρ₀, R]`, for data cut off outside
/// `C_{ρ₀/2}(Y)`.
#[allow(clippy::too_many_arguments)]
pub fn boundary_decay_exponent(
    domain: &DomainSpec,
    field: &CoefficientField,
    y: &SpaceTimePoint,
    k: f64,
    rho0: f64,
    big_r: f64,
    data: &dyn BoundaryData,
    opts: &SolveOptions,
) -> Result<ExponentFit, VerifyError> {
    let mut fits = boundary_decay_exponents(domain, field, y, &[k], rho0, &half_dyadic(2.0 * rho0, big_r), data, opts)?;
    Ok(fits.remove(0))
}

/// One forward solve shared by all apertures `K`.
#[allow(clippy::too_many_arguments)]
pub fn boundary_decay_exponents(
    domain: &DomainSpec,
    field: &CoefficientField,
    y: &SpaceTimePoint,
    ks: &[f64],
    rho0: f64,
    radii: &[f64],
    data: &dyn BoundaryData,
    opts: &SolveOptions,
) -> Result<Vec<ExponentFit>, VerifyError> {
    if ks.iter().any(|k| !(*k >= 1.0)) || !(rho0 > 0.0) || radii.is_empty() {
        return Err(VerifyError::Precondition("need K >= 1, ρ₀ > 0 and a radius list".into()));
    }
    let big_r = radii[radii.len() - 1];
    let k_max = ks.iter().cloned().fold(1.0, f64::max);
    let extent = opts.extent.clone().unwrap_or_else(|| auto_extent(&[&y.x], y.t + big_r * big_r, 1.0, field.nu).widened(k_max * big_r));
    let problem = Problem::new(domain.clone(), field.clone(), &opts.grid, &extent)?;
    let grid = &problem.grid;
    let h = grid.h;
    let region = crate::geometry::observation_region(y.clone(), 1.0, 0.0, big_r)?;
    // Shell node lists and level windows per (K, ρ).
    let mut shells = Vec::new();
    for &k in ks {
        let region = crate::geometry::ObservationRegion { aperture: k, ..region.clone() };
        for &rho in radii {
            let nodes: Vec<usize> =
                grid.active().iter().copied().filter(|&i| region.shell_contains(&grid.coords(i), y.t, rho, h)).collect();
            let levels = level_range(&problem, y.t - rho * rho, y.t + rho * rho, false);
            shells.push((nodes, levels));
        }
    }
    if shells.iter().any(|(n, _)| n.is_empty()) {
        return Err(VerifyError::Precondition("a shell has no grid points inside the domain".into()));
    }
    let data = Restricted { inner: data, y, half: rho0 / 2.0 };
    let end = shells.iter().map(|(_, l)| *l.end()).max().unwrap_or(0);
    let mut f2 = vec![0.0f64; shells.len()];
    problem.march(&data, end, &mut |level, u| {
        for ((nodes, levels), f) in shells.iter().zip(f2.iter_mut()) {
            if levels.contains(&level) {
                for &i in nodes {
                    *f = f.max(-u[i]);
                }
            }
        }
    })?;
    if f2.iter().all(|v| *v <= FIT_FLOOR) {
        return Err(VerifyError::NoNegativePart);
    }
    let mut fits = Vec::new();
    for (j, _) in ks.iter().enumerate() {
        let samples = radii.iter().copied().zip(f2[j * radii.len()..(j + 1) * radii.len()].iter().copied()).collect();
        fits.push(ExponentFit::fit(samples, (radii[0], big_r))?);
    }
    Ok(fits)
}
