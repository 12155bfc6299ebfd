//! Fixtures shared by the solver benchmarks.

use caloric::geometry::patch;
use caloric::measure::Problem;
use caloric::*;

pub struct Fixture {
    pub problem: Problem,
    pub x: SpaceTimePoint,
    pub window: BoundaryPatch,
}

/// Unit box in `n` dimensions on a grid of step `h`, observed from the
/// centre at `t = 0.3`, with a bottom-edge window at `t = 0.2`.
pub fn unit_box(field: CoefficientField, h: f64) -> Fixture {
    let n = field.dim();
    let domain = DomainSpec::unit_box(n);
    let problem = Problem::new(domain.clone(), field, &GridSpec::auto(h), &Extent::cube(n, 1.0)).unwrap();
    let mut corner = vec![0.5; n];
    corner[n - 1] = 0.0;
    let window = patch(&domain, &SpaceTimePoint::new(corner, 0.2).unwrap(), 0.2).unwrap();
    Fixture { problem, x: SpaceTimePoint::new(vec![0.5; n], 0.3).unwrap(), window }
}

pub fn nondivergence_2d() -> CoefficientField {
    builtin_field(FieldKind::Constant { matrix: vec![vec![1.0, 0.5], vec![0.5, 1.0]] }, 0.5, Form::NonDivergence).unwrap()
}
