mod common;

use caloric::discretize::{assemble_step, check_monotone};
use caloric::geometry::patch;
use caloric::measure::*;
use caloric::verify::*;
use caloric::*;
use proptest::prelude::*;

fn pt(x: &[f64], t: f64) -> SpaceTimePoint {
    SpaceTimePoint::new(x.to_vec(), t).unwrap()
}

fn constant_field(a11: f64, a22: f64, c: f64, form: Form) -> CoefficientField {
    let b = c * a11.min(a22);
    builtin_field(FieldKind::Constant { matrix: vec![vec![a11, b], vec![b, a22]] }, 0.2, form).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Both forms give a stochastic step matrix at the default τ whenever the
    // field is diagonally dominant.
    #[test]
    fn default_step_is_monotone(a11 in 1.0f64..2.0, a22 in 1.0f64..2.0, c in -0.7f64..0.7, nd in any::<bool>()) {
        let form = if nd { Form::NonDivergence } else { Form::Divergence };
        let field = constant_field(a11, a22, c, form);
        let grid = Grid::build(&DomainSpec::unit_box(2), field.nu, &GridSpec::auto(0.125), &Extent::cube(2, 1.0)).unwrap();
        let report = check_monotone(&assemble_step(&field, &grid, 0.0).unwrap());
        prop_assert!(report.monotone, "{report:?}");
    }

    #[test]
    fn comparison_for_ordered_random_data(seed in 0u64..1000, shift in 0.0f64..0.5, c in -0.7f64..0.7) {
        let field = constant_field(1.0, 1.5, c, Form::NonDivergence);
        let problem = Problem::new(DomainSpec::half_space(2, 1.0), field, &GridSpec::auto(0.125), &Extent::cube(2, 1.5)).unwrap();
        let lo = RandomData::new(seed, 0.25, -1.0, 1.0);
        let hi = DataFn {
            bottom: |x: &[f64]| lo.bottom(x) + shift,
            lateral: |x: &[f64], t: f64| lo.lateral(x, t) + shift,
        };
        let end = problem.grid.level_of(0.25);
        let a = problem.march(&lo, end, &mut |_, _| {}).unwrap();
        let b = problem.march(&hi, end, &mut |_, _| {}).unwrap();
        for &i in problem.grid.active() {
            prop_assert!(a[i] <= b[i] + 1e-15);
            prop_assert!(a[i].abs() <= 1.0 + 1e-15);
        }
    }

    // Nested patches get nested mass, and no patch exceeds the total.
    #[test]
    fn patch_measures_are_monotone_and_bounded(z in 0.2f64..0.8, s in 0.05f64..0.2, r in 0.05f64..0.3) {
        let domain = DomainSpec::unit_box(1);
        let problem = Problem::new(domain.clone(), CoefficientField::heat(1, Form::Divergence), &GridSpec::auto(0.02), &Extent::cube(1, 1.0)).unwrap();
        let m = problem.measure(&pt(&[0.5], 0.3), 0, &[]).unwrap();
        let anchor = pt(&[z], 0.0);
        let prof = m.profile(&problem.grid, &anchor, &[r, 2.0 * r]);
        prop_assert!(prof[0].1 <= prof[1].1);
        let lateral = pt(&[0.0], s);
        let (b, l) = m.patch_mass(&problem.grid, &patch(&domain, &lateral, r).unwrap());
        prop_assert!(b >= 0.0 && l >= 0.0 && b + l <= 1.0 + 1e-12);
    }

    #[test]
    fn exponent_fit_recovers_exact_power_laws(gamma in -3.0f64..3.0, a in -5.0f64..5.0) {
        let radii = half_dyadic(1.0, 16.0);
        let samples: Vec<(f64, f64)> = radii.iter().map(|&r| (r, (a - gamma * r.ln()).exp())).collect();
        let fit = ExponentFit::fit(samples, (1.0, 16.0)).unwrap();
        prop_assert!((fit.exponent - gamma).abs() < 1e-9);
        prop_assert!((fit.intercept - a).abs() < 1e-9);
    }

    #[test]
    fn stability_is_scale_invariant(c in 0.1f64..10.0, f in 0.1f64..10.0, k in 1e-6f64..1e6) {
        let (a, b) = (stability(c, f), stability(k * c, k * f));
        prop_assert!((a.rel_diff - b.rel_diff).abs() <= 1e-12 * (1.0 + a.rel_diff));
    }
}

// Parabolic scaling (x, t) → (λx, λ²t) with h → λh maps the grid onto
// itself, so the discrete doubling ratio is unchanged.
#[test]
fn heat_profile_is_scale_invariant_on_the_grid() {
    let heat = CoefficientField::heat(1, Form::Divergence);
    let ws = DomainSpec::whole_space(1);
    let run = |l: f64| {
        let opts = SolveOptions { extent: Some(Extent::cube(1, 8.0 * l)), ..SolveOptions::new(0.03125 * l) };
        measure_profile(&ws, &heat, &pt(&[0.5 * l], l * l), &SpaceTimePoint::origin(1), &[0.5 * l, l], &opts).unwrap()
    };
    let base = run(1.0);
    for l in [0.5, 2.0, 4.0] {
        let scaled = run(l);
        for (a, b) in base.iter().zip(&scaled) {
            assert!((a.1 - b.1).abs() <= 1e-12, "λ = {l}: {} vs {}", a.1, b.1);
        }
    }
}

#[test]
fn doubling_ratios_are_at_least_one() {
    let rep = doubling_sweep_wholespace(
        &CoefficientField::heat(1, Form::Divergence),
        4.0,
        &[0.25, 0.5, 1.0],
        &[0.5, 1.0],
        5,
        &SolveOptions::new(0.05),
    )
    .unwrap();
    assert!(!rep.cells.is_empty());
    assert!(rep.cells.iter().all(|c| c.ratio >= 1.0 && c.large >= c.small));
    assert_eq!(rep.max_ratio, rep.cells.iter().map(|c| c.ratio).fold(0.0, f64::max));
}

#[test]
fn monte_carlo_is_seeded() {
    let problem =
        Problem::new(DomainSpec::unit_box(1), CoefficientField::heat(1, Form::Divergence), &GridSpec::auto(0.05), &Extent::cube(1, 1.0))
            .unwrap();
    let x = pt(&[0.5], 0.3);
    let a = mc_exit_sample(&problem, &x, 5000, 1).unwrap();
    let b = mc_exit_sample(&problem, &x, 5000, 1).unwrap();
    let c = mc_exit_sample(&problem, &x, 5000, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.counts, c.counts);
    assert_eq!(a.counts.values().sum::<u64>(), 5000);
}
