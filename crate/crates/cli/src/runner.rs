//! Executes experiment specs and writes their CSV and JSON outputs.

use crate::config::{Expect, Experiment, ExperimentConfig, ExperimentSpec};
use caloric::discretize::DiscretizeError;
use caloric::geometry::patch;
use caloric::measure::{bottom_data, mc_exit_sample, measured_problem, Indicator, MeasureError, SolveOptions};
use caloric::verify::*;
use caloric::GridSpec;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Result of one experiment on one grid.
pub struct Outcome {
    /// Named quantities compared under refinement; the first is the
    /// headline constant.
    pub values: Vec<(String, f64)>,
    pub argmax: String,
    pub grid_id: String,
    pub checks: Vec<Check>,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    pub details: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityEntry {
    pub quantity: String,
    pub coarse: f64,
    pub fine: f64,
    pub rel_diff: f64,
    pub stable: bool,
}

/// JSON summary written next to each CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub kind: String,
    pub config_hash: String,
    pub params: Experiment,
    pub constant: Option<f64>,
    pub argmax: String,
    pub grid: Vec<String>,
    pub stability: Vec<StabilityEntry>,
    pub checks: Vec<Check>,
    pub error: Option<String>,
    pub instability: bool,
    pub passed: bool,
    pub details: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: String,
    pub summary: String,
    pub csv: String,
    pub grids: Vec<String>,
    pub passed: bool,
    pub instability: bool,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub experiments: Vec<ManifestEntry>,
    pub wall_clock_s: f64,
    pub passed: bool,
}

impl RunManifest {
    /// 0 if every check passed, 3 on numerical instability, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.experiments.iter().any(|e| e.instability) {
            3
        } else if self.passed {
            0
        } else {
            1
        }
    }
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn is_instability(e: &VerifyError) -> bool {
    matches!(e, VerifyError::Measure(MeasureError::Discretize(DiscretizeError::Positivity { .. } | DiscretizeError::Dominance { .. })))
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn point(x: &[f64]) -> String {
    x.iter().map(|c| f(*c)).collect::<Vec<_>>().join(" ")
}

fn constant_rows(rep: &ConstantReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["constant".to_string(), f(rep.constant)]];
    rows.extend(rep.params.iter().map(|(k, v)| vec![format!("param:{k}"), f(*v)]));
    rows.extend(rep.extra.iter().map(|(k, v)| vec![k.clone(), f(*v)]));
    rows
}

fn from_constant(rep: ConstantReport, at_least_one: bool) -> Outcome {
    let mut checks = vec![check("finite", rep.constant.is_finite(), format!("N̂ = {}", rep.constant))];
    if at_least_one {
        checks.push(check("ratio_at_least_one", rep.constant >= 1.0, format!("N̂ = {}", rep.constant)));
    }
    Outcome {
        values: vec![("constant".into(), rep.constant)],
        argmax: rep.argmax.clone(),
        grid_id: rep.grid_id.clone(),
        checks,
        header: vec!["quantity", "value"],
        rows: constant_rows(&rep),
        details: json!(rep),
    }
}

fn from_doubling(rep: DoublingReport) -> Outcome {
    let argmax = rep.argmax_cell().map(|c| format!("x = ({}), t = {}, r = {}", point(&c.x), c.t, c.r)).unwrap_or_default();
    let rows = rep.cells.iter().map(|c| vec![point(&c.x), f(c.t), f(c.r), f(c.small), f(c.large), f(c.ratio)]).collect();
    let checks = vec![
        check(
            "finite",
            rep.max_ratio.is_finite() && !rep.cells.is_empty(),
            format!("max ratio {} over {} cells", rep.max_ratio, rep.cells.len()),
        ),
        check("ratio_at_least_one", rep.cells.iter().all(|c| c.ratio >= 1.0), "every ratio ≥ 1".into()),
    ];
    Outcome {
        values: vec![("max_ratio".into(), rep.max_ratio)],
        argmax,
        grid_id: rep.grid_id.clone(),
        checks,
        header: vec!["x", "t", "r", "small", "large", "ratio"],
        rows,
        details: json!(rep),
    }
}

fn fit_rows(k: Option<f64>, fit: &ExponentFit) -> Vec<Vec<String>> {
    fit.samples.iter().map(|(r, v)| vec![k.map(f).unwrap_or_default(), f(*r), f(*v)]).collect()
}

/// Runs one experiment on one grid.
pub fn execute(spec: &ExperimentSpec, grid: &GridSpec) -> Result<Outcome, VerifyError> {
    let opts = SolveOptions { grid: grid.clone(), extent: spec.extent.clone(), k: 1.0 };
    let (domain, field) = (&spec.domain, &spec.field);
    Ok(match &spec.params {
        Experiment::Measure { x, anchor, radii, mc } => {
            let smallest = radii.iter().cloned().fold(f64::INFINITY, f64::min);
            let (problem, m) =
                measured_problem(domain, field, x, &[&anchor.x], &opts, |p, m| m.profile(&p.grid, anchor, &[smallest])[0].1)?;
            let prof = m.profile(&problem.grid, anchor, radii);
            let mut checks =
                vec![check("probability", prof.iter().all(|(_, v)| (0.0..=1.0 + 1e-12).contains(v)), "every ω in [0, 1]".into())];
            let mut sorted = prof.clone();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            checks.push(check("monotone_in_r", sorted.windows(2).all(|w| w[1].1 >= w[0].1), "ω(Δ_r) nondecreasing in r".into()));
            let mut rows = Vec::new();
            let mut mc_json = Vec::new();
            let hist = match mc {
                Some(spec) => Some(mc_exit_sample(&problem, x, spec.paths, spec.seed)?),
                None => None,
            };
            for &(r, v) in &prof {
                let mut row = vec![f(r), f(v)];
                if let Some(hist) = &hist {
                    let (p, se) = hist.estimate(&problem.grid, &patch(domain, anchor, r)?);
                    let sigma = (v * (1.0 - v) / hist.total_paths as f64).sqrt();
                    let z = if sigma > 0.0 { (p - v).abs() / sigma } else { (p - v).abs() };
                    checks.push(check(&format!("monte_carlo_r{r}"), z <= 4.0, format!("MC {p} vs {v}: {z:.2} σ")));
                    row.extend([f(p), f(se)]);
                    mc_json.push(json!({"r": r, "mc": p, "stderr": se}));
                }
                rows.push(row);
            }
            let header = if hist.is_some() { vec!["r", "omega", "mc", "mc_stderr"] } else { vec!["r", "omega"] };
            Outcome {
                values: prof.iter().map(|(r, v)| (format!("omega_r{r}"), *v)).collect(),
                argmax: String::new(),
                grid_id: problem.grid_id().into(),
                checks,
                header,
                rows,
                details: json!({"profile": prof, "artificial_mass": m.artificial_total(), "mc": mc_json}),
            }
        }
        Experiment::DoublingWholespace { k, r_list, t_list, x_per_t } => {
            from_doubling(doubling_sweep_wholespace(field, *k, r_list, t_list, *x_per_t, &opts)?)
        }
        Experiment::DoublingLipschitz { anchor, k, lambda, r_list } => {
            let r_min = r_list.iter().cloned().fold(f64::INFINITY, f64::min);
            let xs = lipschitz_points(domain, anchor, *k, *lambda, r_min);
            from_doubling(doubling_sweep_lipschitz(domain, field, anchor, *k, *lambda, r_list, &xs, &opts)?)
        }
        Experiment::BottomBound { anchor, r } => from_constant(bottom_lower_bound(domain, field, anchor, *r, &opts)?, true),
        Experiment::Oscillation { anchor, r, draws, seed } => {
            let rep = oscillation_decay(domain, field, anchor, *r, *draws, *seed, &opts)?;
            let rows =
                rep.draws.iter().map(|d| vec![d.seed.to_string(), d.sign.to_string(), f(d.sup_r), f(d.sup_2r), f(d.ratio)]).collect();
            let worst = rep.draws.iter().max_by(|a, b| a.ratio.total_cmp(&b.ratio));
            Outcome {
                values: vec![("theta".into(), rep.theta_hat)],
                argmax: worst.map(|d| format!("seed {} sign {}", d.seed, d.sign)).unwrap_or_default(),
                grid_id: rep.grid_id.clone(),
                checks: vec![check("theta_below_one", rep.theta_hat < 1.0, format!("θ̂ = {}", rep.theta_hat))],
                header: vec!["seed", "sign", "sup_r", "sup_2r", "ratio"],
                rows,
                details: json!(rep),
            }
        }
        Experiment::GrowthExponent { anchor, patch_r, rho0, big_r } => {
            let p = patch(domain, anchor, *patch_r)?;
            let fit = growth_exponent(domain, field, &Indicator(&p), anchor, *rho0, *big_r, &opts)?;
            Outcome {
                values: vec![("gamma1".into(), fit.exponent)],
                argmax: String::new(),
                grid_id: String::new(),
                checks: vec![
                    check("finite", fit.exponent.is_finite(), format!("γ̂₁ = {}", fit.exponent)),
                    check("envelope", fit.growth_envelope_holds(*rho0), "f(ρ)(ρ/ρ₀)^γ ≥ inf over [ρ₀, 2ρ₀]".into()),
                ],
                header: vec!["k", "rho", "f"],
                rows: fit_rows(None, &fit),
                details: json!(fit),
            }
        }
        Experiment::BoundaryDecay { anchor, ks, rho0, radii } => {
            let fits = boundary_decay_exponents(domain, field, anchor, ks, *rho0, radii, &NegativeBottom, &opts)?;
            let g: Vec<f64> = fits.iter().map(|f| f.exponent).collect();
            let mut checks = vec![check("finite", g.iter().all(|v| v.is_finite()), format!("γ̂₂ = {g:?}"))];
            if ks.len() > 1 {
                let ascending = ks.windows(2).all(|w| w[1] > w[0]);
                checks.push(check("increasing_in_k", ascending && g.windows(2).all(|w| w[1] > w[0]), format!("K = {ks:?} → γ̂₂ = {g:?}")));
            }
            Outcome {
                values: ks.iter().zip(&g).rev().map(|(k, v)| (format!("gamma2_k{k}"), *v)).collect(),
                argmax: String::new(),
                grid_id: String::new(),
                checks,
                header: vec!["k", "rho", "f"],
                rows: ks.iter().zip(&fits).flat_map(|(k, fit)| fit_rows(Some(*k), fit)).collect(),
                details: json!(fits),
            }
        }
        Experiment::Harnack { delta, lambda, t_max, draws, seed } => {
            from_constant(harnack_constant(domain, field, *delta, *lambda, *t_max, *draws, *seed, &opts)?, true)
        }
        Experiment::BackwardHarnack { x, t, r, delta, draws, seed } => {
            from_constant(backward_harnack(domain, field, x, *t, *r, *delta, *draws, *seed, &opts)?, false)
        }
        Experiment::Quotient { anchor, k, r, data_u, data_v } => {
            let u = bottom_data(|x: &[f64]| data_u.eval(x));
            let v = bottom_data(|x: &[f64]| data_v.eval(x));
            from_constant(quotient_bound(domain, field, anchor, *k, *r, &u, &v, &opts)?, false)
        }
        Experiment::Aronson { t, radius } => {
            let rep = aronson_sandwich(field, *t, *radius, &opts)?;
            Outcome {
                values: vec![("n_upper".into(), rep.n_upper), ("n_lower".into(), rep.n_lower)],
                argmax: String::new(),
                grid_id: rep.grid_id.clone(),
                checks: vec![check("sandwich", rep.passed, format!("N_lower = {}, N_upper = {}", rep.n_lower, rep.n_upper))],
                header: vec!["d2", "gamma"],
                rows: rep.samples.iter().map(|(d2, g)| vec![f(*d2), f(*g)]).collect(),
                details: json!(rep),
            }
        }
        Experiment::GreenMeasure { anchor, rho_list, x } => {
            let rep = green_measure_comparison(domain, field, anchor, rho_list, x, &opts)?;
            let rows = rep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        f(r.rho),
                        f(r.omega),
                        f(r.g_plus),
                        r.g_minus.map(f).unwrap_or_default(),
                        f(r.ratio_plus),
                        r.ratio_minus.map(f).unwrap_or_default(),
                    ]
                })
                .collect();
            Outcome {
                values: vec![("constant".into(), rep.constant)],
                argmax: String::new(),
                grid_id: rep.grid_id.clone(),
                checks: vec![
                    check("finite", rep.constant.is_finite(), format!("N̂ = {}", rep.constant)),
                    check("ratio_at_least_one", rep.constant >= 1.0, format!("N̂ = {}", rep.constant)),
                ],
                header: vec!["rho", "omega", "g_plus", "g_minus", "ratio_plus", "ratio_minus"],
                rows,
                details: json!(rep),
            }
        }
        Experiment::InteriorDomination { anchor, rho, k, lambda } => {
            from_constant(interior_measure_domination(domain, field, anchor, *rho, *k, *lambda, &opts)?, true)
        }
    })
}

/// Runs one spec at `h` (and `h/2` when refining) and folds the two runs
/// into a summary plus CSV rows tagged with the grid step.
pub fn run_spec(spec: &ExperimentSpec, hash: &str) -> (Summary, Vec<String>, Vec<Vec<String>>) {
    let mut grids = vec![spec.grid.clone()];
    if spec.refine {
        grids.push(spec.grid.refined());
    }
    let mut summary = Summary {
        experiment: spec.name.clone(),
        kind: spec.params.kind().into(),
        config_hash: hash.into(),
        params: spec.params.clone(),
        constant: None,
        argmax: String::new(),
        grid: Vec::new(),
        stability: Vec::new(),
        checks: Vec::new(),
        error: None,
        instability: false,
        passed: false,
        details: Vec::new(),
    };
    let mut header = vec!["config_hash".to_string(), "experiment".into(), "h".into()];
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for g in &grids {
        match execute(spec, g) {
            Ok(o) => {
                if header.len() == 3 {
                    header.extend(o.header.iter().map(|s| s.to_string()));
                }
                for r in &o.rows {
                    let mut row = vec![hash.to_string(), spec.name.clone(), f(g.h)];
                    row.extend(r.iter().cloned());
                    rows.push(row);
                }
                outcomes.push(o);
            }
            Err(e) => {
                summary.instability = is_instability(&e);
                summary.error = Some(format!("h = {}: {e}", g.h));
                break;
            }
        }
    }
    if let Some(last) = outcomes.last() {
        summary.constant = last.values.first().map(|v| v.1);
        summary.argmax = last.argmax.clone();
        summary.checks = last.checks.clone();
        if let (Some(x), Some(c)) = (&spec.expect, summary.constant) {
            summary.checks.extend(expectations(x, c));
        }
    }
    if let [coarse, fine] = &outcomes[..] {
        for ((name, c), (_, v)) in coarse.values.iter().zip(&fine.values) {
            let s = stability(*c, *v);
            summary.stability.push(StabilityEntry { quantity: name.clone(), coarse: *c, fine: *v, rel_diff: s.rel_diff, stable: s.stable });
        }
        for s in &summary.stability {
            summary.checks.push(check(
                &format!("stable_{}", s.quantity),
                s.stable,
                format!("{} → {} (rel {:.3e}, tol {STABILITY_TOL})", s.coarse, s.fine, s.rel_diff),
            ));
        }
    }
    for o in outcomes {
        summary.grid.push(o.grid_id);
        summary.details.push(o.details);
    }
    summary.passed = summary.error.is_none() && summary.checks.iter().all(|c| c.passed);
    (summary, header, rows)
}

fn expectations(x: &Expect, c: f64) -> Vec<Check> {
    let mut out = Vec::new();
    if let Some(m) = x.min {
        out.push(check("expect_min", c >= m, format!("{c} ≥ {m}")));
    }
    if let Some(m) = x.max {
        out.push(check("expect_max", c <= m, format!("{c} ≤ {m}")));
    }
    if let (Some(v), Some(tol)) = (x.value, x.rel_tol) {
        let rel = (c - v).abs() / v.abs().max(f64::MIN_POSITIVE);
        out.push(check("expect_value", rel <= tol, format!("{c} vs {v}: rel {rel:.3e} (tol {tol})")));
    }
    out
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

/// Runs every experiment of `config` and writes `<name>.csv`,
/// `<name>.json` and `manifest.json` into `out`.
pub fn run(config: &ExperimentConfig, out: &Path, log: bool) -> std::io::Result<(RunManifest, PathBuf)> {
    std::fs::create_dir_all(out)?;
    let hash = config_hash(config);
    let start = Instant::now();
    let mut entries = Vec::new();
    for spec in &config.experiments {
        let t0 = Instant::now();
        let (summary, header, rows) = run_spec(spec, &hash);
        let csv_name = format!("{}.csv", spec.name);
        let json_name = format!("{}.json", spec.name);
        write_csv(&out.join(&csv_name), &header, &rows)?;
        write_json(&out.join(&json_name), &summary)?;
        let secs = t0.elapsed().as_secs_f64();
        if log {
            let status = if summary.passed { "ok" } else { "FAILED" };
            eprintln!("{:<28} {:<20} {:>14} {:>8.1}s  {status}", spec.name, summary.kind, fmt_opt(summary.constant), secs);
            if let Some(e) = &summary.error {
                eprintln!("    error: {e}");
            }
            for c in summary.checks.iter().filter(|c| !c.passed) {
                eprintln!("    failed {}: {}", c.name, c.detail);
            }
        }
        entries.push(ManifestEntry {
            name: spec.name.clone(),
            kind: summary.kind.clone(),
            summary: json_name,
            csv: csv_name,
            grids: summary.grid.clone(),
            passed: summary.passed,
            instability: summary.instability,
            wall_clock_s: secs,
        });
    }
    let manifest = RunManifest {
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        passed: entries.iter().all(|e| e.passed),
        experiments: entries,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    let path = out.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok((manifest, path))
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "-".into(),
    }
}
