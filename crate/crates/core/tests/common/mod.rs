//! Closed-form and quadrature oracles shared by the integration tests.
#![allow(dead_code)]

use statrs::function::erf::{erf, erfc};
use std::f64::consts::{PI, TAU};

pub fn rel(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs()
}

/// Mass of `(a, b)` under the heat kernel on the line started at `x`,
/// run for time `t`.
pub fn line_interval_mass(x: f64, t: f64, a: f64, b: f64) -> f64 {
    let s = 2.0 * t.sqrt();
    0.5 * (erf((b - x) / s) - erf((a - x) / s))
}

/// Probability that heat on `x > 0` started at `x` hits `0` within `t`.
pub fn half_line_first_passage(x: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    erfc(x / (2.0 * t.sqrt()))
}

/// `ω^X` of the lateral window `{0} × (s - ρ², s + ρ²)` for `X = (x, t)`.
pub fn half_line_window(x: f64, t: f64, s: f64, rho: f64) -> f64 {
    half_line_first_passage(x, t - s + rho * rho) - half_line_first_passage(x, t - s - rho * rho)
}

/// `ω^X` of the corner patch at `(0, 0)` of radius `r`: lateral part on
/// `(0, r²)` plus the image-corrected bottom part on `(0, r)`.
pub fn half_line_corner(x: f64, t: f64, r: f64) -> f64 {
    let s = 2.0 * t.sqrt();
    let lateral = half_line_first_passage(x, t) - half_line_first_passage(x, t - r * r);
    let bottom = 0.5 * (erf((r - x) / s) + 2.0 * erf(x / s) - erf((r + x) / s));
    lateral + bottom
}

/// `ω^X(Δ_2r(0)) ` for whole-line heat, minimized by brute force over
/// `|x| ≤ r`, `0 < t ≤ r²`.
pub fn line_bottom_infimum(r: f64) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..=400 {
        let x = -r + 2.0 * r * i as f64 / 400.0;
        for j in 1..=400 {
            let t = r * r * j as f64 / 400.0;
            best = best.min(line_interval_mass(x, t, -2.0 * r, 2.0 * r));
        }
    }
    best
}

/// `∫_{|y| < r} Γ_a(x - y, t) dy` for a constant 2×2 matrix `a`, by
/// midpoint quadrature in polar coordinates.
pub fn plane_disk_mass(a: [[f64; 2]; 2], x: [f64; 2], t: f64, r: f64, nodes: usize) -> f64 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let (dr, dth) = (r / nodes as f64, TAU / nodes as f64);
    let mut sum = 0.0;
    for i in 0..nodes {
        let rr = (i as f64 + 0.5) * dr;
        for j in 0..nodes {
            let th = (j as f64 + 0.5) * dth;
            let d = [x[0] - rr * th.cos(), x[1] - rr * th.sin()];
            let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
            sum += (-q / (4.0 * t)).exp() * rr;
        }
    }
    sum * dr * dth / (4.0 * PI * t * det.sqrt())
}

/// Heat kernel `(4πt)^{-n/2} e^{-|x|²/4t}`.
pub fn heat_kernel(n: usize, d2: f64, t: f64) -> f64 {
    (4.0 * PI * t).powf(-(n as f64) / 2.0) * (-d2 / (4.0 * t)).exp()
}

/// Smallest `N` on a geometric scan (ratio `1 + 1e-5`) with
/// `N⁻¹ e^{-N d²} ≤ g` (lower) or `g ≤ N e^{-d²/N}` (upper) at every
/// sample.
pub fn envelope_by_scan(samples: &[(f64, f64)]) -> (f64, f64) {
    let scan = |ok: &dyn Fn(f64) -> bool| {
        let mut n = 1.0f64;
        while !ok(n) {
            n *= 1.0 + 1e-5;
            assert!(n < 1e4, "envelope scan did not terminate");
        }
        n
    };
    let lower = scan(&|n| samples.iter().all(|&(d2, g)| (-n * d2).exp() / n <= g));
    let upper = scan(&|n| samples.iter().all(|&(d2, g)| g <= n * (-d2 / n).exp()));
    (lower, upper)
}
