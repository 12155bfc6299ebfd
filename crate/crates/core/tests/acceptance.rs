//! Acceptance matrix: one PASS/FAIL line per check, grouped by criterion.
//! Exits with status 1 if any check fails.

mod common;

use caloric::geometry::patch;
use caloric::measure::*;
use caloric::verify::*;
use caloric::*;
use common::*;
use std::time::Instant;

struct Suite {
    passed: usize,
    failed: Vec<String>,
}

impl Suite {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(name.to_string());
        }
    }

    fn close(&mut self, name: &str, value: f64, reference: f64, tol: f64) {
        let e = rel(value, reference);
        self.check(name, e <= tol, format!("{value:.6} vs {reference:.6}, rel {e:.2e} (tol {tol})"));
    }

    fn stable(&mut self, name: &str, coarse: f64, fine: f64) {
        let s = stability(coarse, fine);
        self.check(name, s.stable, format!("h {coarse:.6}, h/2 {fine:.6}, rel {:.2e} (tol {STABILITY_TOL})", s.rel_diff));
    }

    fn info(&self, name: &str, detail: String) {
        println!("INFO {name}: {detail}");
    }

    fn run(&mut self, title: &str, f: impl FnOnce(&mut Suite)) {
        println!("== {title}");
        let t0 = Instant::now();
        f(self);
        println!("   ({:.1} s)", t0.elapsed().as_secs_f64());
    }
}

fn pt(x: &[f64], t: f64) -> SpaceTimePoint {
    SpaceTimePoint::new(x.to_vec(), t).unwrap()
}

fn heat(n: usize) -> CoefficientField {
    CoefficientField::heat(n, Form::Divergence)
}

fn nd_constant() -> CoefficientField {
    builtin_field(FieldKind::Constant { matrix: vec![vec![1.0, 0.5], vec![0.5, 1.0]] }, 0.5, Form::NonDivergence).unwrap()
}

fn nd_rotating() -> CoefficientField {
    builtin_field(FieldKind::Rotating { eigenvalues: [1.0, 2.0], angle: 0.0, twist: 0.5, spin: 0.0 }, 0.5, Form::NonDivergence).unwrap()
}

fn opts(h: f64) -> SolveOptions {
    SolveOptions::new(h)
}

fn gaussian_oracle(s: &mut Suite) {
    let t0 = Instant::now();
    let x = pt(&[0.0], 1.0);
    let y = pt(&[0.0], 0.0);
    let radii = [0.5, 1.0, 2.0];
    let prof = measure_profile(&DomainSpec::whole_space(1), &heat(1), &x, &y, &radii, &opts(0.01)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    for (r, v) in prof {
        s.close(&format!("c1.erf_r{r}"), v, line_interval_mass(0.0, 1.0, -r, r), 0.01);
    }
    s.check("c1.runtime", secs < 10.0, format!("{secs:.2} s (limit 10 s)"));
}

fn doubling_oracle(s: &mut Suite) {
    let x = pt(&[0.0], 1.0);
    let y = pt(&[0.0], 0.0);
    let prof = measure_profile(&DomainSpec::whole_space(1), &heat(1), &x, &y, &[1.0, 2.0], &opts(0.01)).unwrap();
    let exact = line_interval_mass(0.0, 1.0, -2.0, 2.0) / line_interval_mass(0.0, 1.0, -1.0, 1.0);
    s.close("c2.ratio_r1", prof[1].1 / prof[0].1, exact, 0.01);

    let radii = half_dyadic(0.125, 4.0);
    let sweep = |h: f64| doubling_sweep_wholespace(&heat(1), 8.0, &radii, &[1.0], 17, &opts(h)).unwrap();
    let (coarse, fine) = (sweep(0.02), sweep(0.01));
    let cell = fine.argmax_cell().unwrap().clone();
    // The same cells evaluated with the exact kernel.
    let oracle_max = fine
        .cells
        .iter()
        .map(|c| {
            let small = line_interval_mass(c.x[0], c.t, -c.r, c.r);
            line_interval_mass(c.x[0], c.t, -2.0 * c.r, 2.0 * c.r) / small
        })
        .fold(0.0, f64::max);
    let axis_max = fine.cells.iter().filter(|c| c.x[0] == 0.0).map(|c| c.ratio).fold(0.0, f64::max);
    s.info("c2.sweep_oracle_max", format!("exact-kernel max over the same cells {oracle_max:.4}"));
    s.info("c2.sweep_axis_max", format!("max over x = 0 {axis_max:.4}"));
    s.check(
        "c2.sweep_max_le_2.2",
        fine.max_ratio <= 2.2,
        format!("max {:.4} at x = {:.3}, t = {}, r = {:.4} over {} cells", fine.max_ratio, cell.x[0], cell.t, cell.r, fine.cells.len()),
    );
    s.stable("c2.sweep_max_stable", coarse.max_ratio, fine.max_ratio);
}

fn half_line_oracle(s: &mut Suite) {
    let domain = DomainSpec::half_space(1, 1.0);
    let problem = Problem::new(domain.clone(), heat(1), &GridSpec::auto(0.005), &Extent::new(vec![-0.1], vec![8.0])).unwrap();
    let x = pt(&[0.5], 1.0);
    let m = problem.measure(&x, 0, &[]).unwrap();
    let lateral: f64 = m.lateral.iter().sum();
    s.close("c3.first_passage_total", lateral, half_line_first_passage(0.5, 1.0), 0.02);
    let window = patch(&domain, &pt(&[0.0], 0.5), 0.25).unwrap();
    let (_, w) = m.patch_mass(&problem.grid, &window);
    s.close("c3.lateral_window", w, half_line_window(0.5, 1.0, 0.5, 0.25), 0.02);
    let corner = patch(&domain, &pt(&[0.0], 0.0), 0.25).unwrap();
    let (b, l) = m.patch_mass(&problem.grid, &corner);
    s.close("c3.corner_patch", b + l, half_line_corner(0.5, 1.0, 0.25), 0.02);

    let y = pt(&[0.0], 0.0);
    let xs = lipschitz_points(&domain, &y, 2.0, 1.0, 0.0625);
    let radii = [0.0625, 0.125, 0.25];
    let sweep = |h: f64| doubling_sweep_lipschitz(&domain, &heat(1), &y, 2.0, 1.0, &radii, &xs, &opts(h)).unwrap();
    let (coarse, fine) = (sweep(0.01), sweep(0.005));
    s.check(
        "c3.corner_doubling_finite",
        fine.max_ratio.is_finite() && !fine.cells.is_empty(),
        format!("max {:.5} over {} cells, {} excluded", fine.max_ratio, fine.cells.len(), fine.excluded.len()),
    );
    s.stable("c3.corner_doubling_stable", coarse.max_ratio, fine.max_ratio);
}

fn bottom_bound(s: &mut Suite) {
    let rep = bottom_lower_bound(&DomainSpec::whole_space(1), &heat(1), &pt(&[0.0], 0.0), 1.0, &opts(0.025)).unwrap();
    s.close("c4.bottom_infimum", rep.extra["infimum"], line_bottom_infimum(1.0), 0.02);
}

/// Maximum principle, comparison, additivity, unit mass and the Monte-Carlo
/// cross-check on one problem.
fn structure_checks(s: &mut Suite, tag: &str, field: &CoefficientField, h: f64) {
    let n = field.dim();
    let domain = DomainSpec::unit_box(n);
    let problem = Problem::new(domain.clone(), field.clone(), &GridSpec::auto(h), &Extent::cube(n, 1.0)).unwrap();
    let centre = vec![0.5; n];
    let x = pt(&centre, 0.3);
    let end = problem.grid.level_of(0.3);

    let lo = RandomData::new(11, 0.1, -1.0, 1.0);
    let mut worst = 0.0f64;
    problem
        .march(&lo, end, &mut |_, u| {
            for &i in problem.grid.active() {
                worst = worst.max(u[i].abs());
            }
        })
        .unwrap();
    s.check(&format!("{tag}.max_principle"), worst <= 1.0, format!("max |u| = {worst:.15} for data in [-1, 1]"));

    let shifted = DataFn {
        bottom: |x: &[f64]| lo.bottom(x) + 0.25 * (1.0 + x[0]),
        lateral: |x: &[f64], t: f64| lo.lateral(x, t) + 0.25 * (1.0 + x[0]),
    };
    let a = problem.march(&lo, end, &mut |_, _| {}).unwrap();
    let b = problem.march(&shifted, end, &mut |_, _| {}).unwrap();
    let violations = problem.grid.active().iter().filter(|&&i| a[i] > b[i]).count();
    s.check(&format!("{tag}.comparison"), violations == 0, format!("{violations} nodes with u₁ > u₂ for φ₁ ≤ φ₂"));

    let m = problem.measure(&x, 0, &[]).unwrap();
    s.check(
        &format!("{tag}.unit_mass"),
        (m.total() - 1.0).abs() <= 1e-10,
        format!("total {:.15}, artificial {:e}", m.total(), m.artificial_total()),
    );
    let mut corner = vec![0.5; n];
    corner[n - 1] = 0.0;
    let anchor = pt(&corner, 0.2);
    let big = patch(&domain, &anchor, 0.2).unwrap();
    let small = patch(&domain, &anchor, 0.1).unwrap();
    let (bb, bl) = m.patch_mass(&problem.grid, &big);
    let (sb, sl) = m.patch_mass(&problem.grid, &small);
    let ring = Complement(&small);
    let ring_mass = {
        let mut acc = 0.0;
        m.for_each_site(&problem.grid, |z, t, w, _| {
            if big.contains(z, t) && ring.lateral(z, t) == 1.0 {
                acc += w;
            }
        });
        acc
    };
    let gap = ((bb + bl) - (sb + sl) - ring_mass).abs();
    s.check(&format!("{tag}.additivity"), gap <= 1e-14, format!("ω(Δ_2r) - ω(Δ_r) - ω(ring) = {gap:e}"));
    let via_forward = problem.solve(&Indicator(&big), &x).unwrap();
    let gap = (via_forward - (bb + bl)).abs();
    s.check(&format!("{tag}.forward_backward"), gap <= 1e-12, format!("forward {via_forward:.12}, backward {:.12}", bb + bl));

    let paths = 100_000;
    let hist = mc_exit_sample(&problem, &x, paths, 2024).unwrap();
    let (p_mc, _) = hist.estimate(&problem.grid, &big);
    let p = bb + bl;
    let sigma = (p * (1.0 - p) / paths as f64).sqrt();
    let z = (p_mc - p).abs() / sigma;
    s.check(&format!("{tag}.monte_carlo"), z <= 4.0, format!("MC {p_mc:.5}, exact {p:.5}, {z:.2} σ at {paths} paths"));
}

fn exponent_laws(s: &mut Suite) {
    let ws = DomainSpec::whole_space(1);
    let origin = pt(&[0.0], 0.0);
    let bottom = patch(&ws, &origin, 1.0).unwrap();
    let g1 = |h: f64| growth_exponent(&ws, &heat(1), &Indicator(&bottom), &origin, 4.0, 16.0, &opts(h)).unwrap();
    let (c, f) = (g1(0.2), g1(0.1));
    s.check("c6.gamma1", (f.exponent - 1.0).abs() <= 0.1, format!("γ̂₁ = {:.4} over {} points", f.exponent, f.used));
    s.stable("c6.gamma1_stable", c.exponent, f.exponent);

    let fits =
        boundary_decay_exponents(&ws, &heat(1), &origin, &[8.0, 16.0, 32.0], 1.0, &half_dyadic(2.0, 8.0), &NegativeBottom, &opts(0.1))
            .unwrap();
    let g: Vec<f64> = fits.iter().map(|f| f.exponent).collect();
    s.check("c6.gamma2_increasing", g[0] < g[1] && g[1] < g[2], format!("γ̂₂ over K = 8, 16, 32: {g:.4?}"));

    let hl = DomainSpec::half_space(1, 1.0);
    let th = |h: f64| oscillation_decay(&hl, &heat(1), &origin, 0.25, 20, 7, &opts(h)).unwrap();
    let (c, f) = (th(1.0 / 64.0), th(1.0 / 128.0));
    let draws = f.draws.len() / 2 + f.draws.len() % 2;
    s.check(
        "c6.theta_below_one",
        f.theta_hat < 1.0 && draws >= 10,
        format!("θ̂ = {:.4} over {} signed ratios from 20 draws", f.theta_hat, f.draws.len()),
    );
    s.stable("c6.theta_stable", c.theta_hat, f.theta_hat);
}

fn constants(s: &mut Suite) {
    let unit = DomainSpec::unit_box(1);
    let hk = |h: f64| harnack_constant(&unit, &heat(1), 0.25, 16.0, 1.0, 5, 3, &opts(h)).unwrap();
    let (c, f) = (hk(0.02), hk(0.01));
    s.check("c7.harnack_finite", f.constant.is_finite() && f.constant >= 1.0, format!("N̂ = {:.4} at {}", f.constant, f.argmax));
    s.stable("c7.harnack_stable", c.constant, f.constant);

    let r = 0.1;
    let bh = |h: f64| backward_harnack(&unit, &heat(1), &[0.5], 1.0, r, 0.25, 5, 5, &opts(h)).unwrap();
    let (c, f) = (bh(0.02), bh(0.01));
    s.check("c7.backward_harnack_finite", f.constant.is_finite(), format!("N̂ = {:.5}", f.constant));
    s.stable("c7.backward_harnack_stable", c.constant, f.constant);
    let eig = backward_harnack_with(&unit, &heat(1), &[0.5], 1.0, r, 0.25, &[&bottom_data(|_: &[f64]| 1.0)], &opts(0.01)).unwrap();
    let mode = (2.0 * std::f64::consts::PI.powi(2) * r * r).exp();
    s.close("c7.eigenmode_ratio", eig.extra["earlier_over_later_max"], mode, 0.05);

    let hl = DomainSpec::half_space(1, 1.0);
    let u = bottom_data(|x: &[f64]| (-x[0]).exp());
    let v = bottom_data(|x: &[f64]| 1.0 / (1.0 + x[0] * x[0]));
    let y = pt(&[0.0], 0.5);
    let qb = |h: f64| quotient_bound(&hl, &heat(1), &y, 4.0, 0.25, &u, &v, &opts(h)).unwrap();
    let (c, f) = (qb(1.0 / 64.0), qb(1.0 / 128.0));
    s.check("c7.quotient_finite", f.constant.is_finite() && f.constant > 0.0, format!("N̂ = {:.5}", f.constant));
    s.stable("c7.quotient_stable", c.constant, f.constant);

    let dom = |h: f64| interior_measure_domination(&hl, &heat(1), &pt(&[0.0], 0.0), 0.25, 8.0, 2.0, &opts(h)).unwrap();
    let (c, f) = (dom(1.0 / 128.0), dom(1.0 / 256.0));
    s.check("c7.domination_finite", f.constant.is_finite() && f.constant >= 1.0, format!("N̂₁ = {:.4e}", f.constant));
    s.stable("c7.domination_stable", c.constant, f.constant);

    let rhos = [1.0 / 16.0, 0.125, 0.25, 0.5];
    let gm = |h: f64| green_measure_comparison(&hl, &heat(1), &pt(&[0.0], 0.5), &rhos, &pt(&[0.5], 1.5), &opts(h)).unwrap();
    let (c, f) = (gm(1.0 / 64.0), gm(1.0 / 128.0));
    s.check("c7.green_measure_finite", f.constant.is_finite() && f.rows.len() == rhos.len(), format!("N̂ = {:.5}", f.constant));
    s.stable("c7.green_measure_stable", c.constant, f.constant);
}

fn aronson(s: &mut Suite) {
    let diag = |v: Vec<f64>| builtin_field(FieldKind::Diag { values: v }, 0.5, Form::Divergence).unwrap();
    let rotating =
        builtin_field(FieldKind::Rotating { eigenvalues: [1.0, 2.0], angle: 0.0, twist: 0.5, spin: 0.0 }, 0.5, Form::Divergence).unwrap();
    let cases: Vec<(&str, CoefficientField, f64)> = vec![
        ("identity_1d", heat(1), 0.05),
        ("diag_1d", diag(vec![0.5]), 0.05),
        ("identity_2d", heat(2), 0.2),
        ("diag_2d", diag(vec![0.5, 2.0]), 0.2),
        ("rotating_2d", rotating, 0.2),
    ];
    for (name, field, h) in cases {
        let c = aronson_sandwich(&field, 1.0, 6.0, &opts(h)).unwrap();
        let f = aronson_sandwich(&field, 1.0, 6.0, &opts(h / 2.0)).unwrap();
        s.check(&format!("c8.{name}_sandwich"), f.passed, format!("N_lower {:.4}, N_upper {:.4}", f.n_lower, f.n_upper));
        s.stable(&format!("c8.{name}_lower_stable"), c.n_lower, f.n_lower);
        s.stable(&format!("c8.{name}_upper_stable"), c.n_upper, f.n_upper);
        if matches!(field.kind, FieldKind::Identity { .. }) {
            let n = field.dim();
            let exact: Vec<(f64, f64)> = f.samples.iter().map(|&(d2, _)| (d2, heat_kernel(n, d2, 1.0))).collect();
            let (lo, up) = envelope_by_scan(&exact);
            s.close(&format!("c8.{name}_lower_vs_exact"), f.n_lower, lo, 0.05);
            s.close(&format!("c8.{name}_upper_vs_exact"), f.n_upper, up, 0.05);
        }
    }
    let guard = aronson_sandwich(&nd_constant(), 1.0, 6.0, &opts(0.2));
    s.check("c8.nondivergence_refused", guard == Err(VerifyError::NonDivergence), format!("{guard:?}").chars().take(80).collect());
}

fn nondivergence(s: &mut Suite) {
    let ws = DomainSpec::whole_space(2);
    let hp = DomainSpec::half_space(2, 1.0);
    let origin = SpaceTimePoint::origin(2);
    let a = [[1.0, 0.5], [0.5, 1.0]];
    for (tag, field) in [("c9.const", nd_constant()), ("c9.rotating", nd_rotating())] {
        let is_const = tag == "c9.const";
        // Bottom-patch profile and doubling ratio on the axis.
        let x = pt(&[0.0, 0.0], 1.0);
        let prof = |h: f64| measure_profile(&ws, &field, &x, &origin, &[1.0, 2.0, 4.0], &opts(h)).unwrap();
        let (c, f) = (prof(0.1), prof(0.05));
        for i in 0..2 {
            s.stable(&format!("{tag}.profile_r{}_stable", f[i].0), c[i].1, f[i].1);
        }
        let ratio = f[1].1 / f[0].1;
        s.stable(&format!("{tag}.doubling_r1_stable"), c[1].1 / c[0].1, ratio);
        if is_const {
            for &(r, v) in &f[..2] {
                s.close(&format!("{tag}.disk_mass_r{r}"), v, plane_disk_mass(a, [0.0, 0.0], 1.0, r, 400), 0.02);
            }
        }

        // Half-plane first passage and corner doubling.
        let xh = pt(&[0.0, 0.5], 1.0);
        let lat = |h: f64| {
            let p = Problem::around(hp.clone(), field.clone(), &GridSpec::auto(h), &[&xh.x], 1.0, 1.0).unwrap();
            let m = p.measure(&xh, 0, &[]).unwrap();
            let pr = m.profile(&p.grid, &origin, &[0.25, 0.5]);
            (m.lateral.iter().sum::<f64>(), pr[1].1 / pr[0].1)
        };
        let (c, f) = (lat(0.0625), lat(0.03125));
        if is_const {
            s.close(&format!("{tag}.first_passage_total"), f.0, half_line_first_passage(0.5, 1.0), 0.02);
        } else {
            s.stable(&format!("{tag}.first_passage_stable"), c.0, f.0);
        }
        s.check(&format!("{tag}.corner_doubling_finite"), f.1.is_finite(), format!("ratio {:.4}", f.1));
        s.stable(&format!("{tag}.corner_doubling_stable"), c.1, f.1);

        let bb = |h: f64| bottom_lower_bound(&ws, &field, &origin, 1.0, &opts(h)).unwrap().extra["infimum"];
        let (c, f) = (bb(0.1), bb(0.05));
        s.check(&format!("{tag}.bottom_bound_positive"), f > 0.0, format!("inf ω = {f:.4}"));
        s.stable(&format!("{tag}.bottom_bound_stable"), c, f);

        structure_checks(s, tag, &field, 0.05);

        let disk = patch(&ws, &origin, 1.0).unwrap();
        let radii = half_dyadic(1.0, 2.0 * 2f64.sqrt());
        let g1 = |h: f64| growth_exponent_on(&ws, &field, &Indicator(&disk), &origin, &radii, &opts(h)).unwrap();
        let (c, f) = (g1(0.25), g1(0.125));
        s.check(&format!("{tag}.gamma1_finite"), f.exponent.is_finite() && f.exponent > 0.0, format!("γ̂₁ = {:.4}", f.exponent));
        s.stable(&format!("{tag}.gamma1_stable"), c.exponent, f.exponent);

        // Shells reach radius K·R; the box is 1.2·K_max·R.
        let radii = half_dyadic(1.0, 2.0 * 2f64.sqrt());
        let boxed = SolveOptions { extent: Some(Extent::cube(2, 1.2 * 32.0 * radii[radii.len() - 1])), ..opts(0.25) };
        let fits = boundary_decay_exponents(&ws, &field, &origin, &[8.0, 16.0, 32.0], 0.5, &radii, &NegativeBottom, &boxed).unwrap();
        let g: Vec<f64> = fits.iter().map(|f| f.exponent).collect();
        s.check(&format!("{tag}.gamma2_increasing"), g[0] < g[1] && g[1] < g[2], format!("γ̂₂ over K = 8, 16, 32: {g:.4?}"));

        let th = oscillation_decay(&hp, &field, &origin, 0.25, 20, 7, &opts(1.0 / 16.0)).unwrap();
        s.check(
            &format!("{tag}.theta_below_one"),
            th.theta_hat < 1.0,
            format!("θ̂ = {:.4} over {} signed ratios from 20 draws", th.theta_hat, th.draws.len()),
        );
        let one = |h: f64| oscillation_decay(&hp, &field, &origin, 0.25, 1, 11, &opts(h)).unwrap().theta_hat;
        s.stable(&format!("{tag}.theta_stable"), one(1.0 / 32.0), one(1.0 / 64.0));
    }
}

fn main() {
    let mut s = Suite { passed: 0, failed: Vec::new() };
    let t0 = Instant::now();
    s.run("1 Gaussian oracle", gaussian_oracle);
    s.run("2 doubling ratio oracle", doubling_oracle);
    s.run("3 half-line images oracle", half_line_oracle);
    s.run("4 bottom bound", bottom_bound);
    s.run("5 discrete structure", |s| structure_checks(s, "c5.heat1", &heat(1), 0.02));
    s.run("6 exponent laws", exponent_laws);
    s.run("7 constants", constants);
    s.run("8 Aronson envelope", aronson);
    s.run("9 nondivergence coverage", nondivergence);
    println!(
        "== {} passed, {} failed in {:.0} s{}",
        s.passed,
        s.failed.len(),
        t0.elapsed().as_secs_f64(),
        if s.failed.is_empty() { String::new() } else { format!(": {}", s.failed.join(", ")) }
    );
    if !s.failed.is_empty() {
        std::process::exit(1);
    }
}
