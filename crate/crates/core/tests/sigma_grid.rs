//! Closed-form optimal scales against a brute-force grid over `(0, cap]²`.

use pacgen::pacbayes::{gaussian_support_cap, solve_sigma_gaussian, solve_sigma_uniform};
use pacgen::rng::{stream_rng, Stream};
use rand::Rng;

const STEP: f64 = 1e-3;

struct Case {
    diag: [f64; 2],
    kappa: [f64; 2],
    rho: f64,
    eta: f64,
    tau: f64,
}

fn cases(n: usize, seed: u64) -> Vec<Case> {
    let mut rng = stream_rng(seed, 0, Stream::MonteCarlo, 0);
    (0..n)
        .map(|k| {
            let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
            // Every other case has a flat direction so the cap is active.
            let d0 = if k % 2 == 0 { 0.0 } else { draw(0.0, 5.0) };
            Case {
                diag: [d0, draw(0.0, 20.0)],
                kappa: [draw(0.05, 1.0), draw(0.05, 1.0)],
                rho: draw(0.0, 2.0),
                eta: draw(1.0, 100.0),
                tau: draw(0.5, 5.0),
            }
        })
        .collect()
}

/// Argmin over the grid `{STEP, 2·STEP, …} ∩ (0, cap_i]` per axis.
fn grid_argmin(cap: [f64; 2], rhs: impl Fn(f64, f64) -> f64) -> [f64; 2] {
    let n0 = (cap[0] / STEP).floor() as usize;
    let n1 = (cap[1] / STEP).floor() as usize;
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for i in 1..=n0 {
        for j in 1..=n1 {
            let s = [i as f64 * STEP, j as f64 * STEP];
            let v = rhs(s[0], s[1]);
            if v < best.0 {
                best = (v, s);
            }
        }
    }
    best.1
}

#[test]
fn uniform_scales_match_grid_minimum() {
    for c in cases(10, 1) {
        let root_m = 2f64.sqrt();
        let tau = [c.kappa[0] + 1.0, c.kappa[1] + 1.0];
        // Σ dσ²/6 + (ρ√m/18) Σ κσ² + Σ ln(τ/σ) / η
        let term = |i: usize, s: f64| {
            c.diag[i] * s * s / 6.0 + c.rho * root_m / 18.0 * c.kappa[i] * s * s + (tau[i] / s).ln() / c.eta
        };
        let grid = grid_argmin(c.kappa, |a, b| term(0, a) + term(1, b));
        let star = solve_sigma_uniform(&c.diag, &c.kappa, c.rho, c.eta).unwrap();
        for i in 0..2 {
            assert!((star[i] - grid[i]).abs() <= STEP, "σ*={star:?} grid={grid:?}");
        }
    }
}

#[test]
fn gaussian_scales_match_grid_minimum() {
    for c in cases(10, 2) {
        let root_m = 2f64.sqrt();
        let cap = [gaussian_support_cap(c.kappa[0], 2), gaussian_support_cap(c.kappa[1], 2)];
        // ½ Σ dσ² + (ρ√m/6) Σ κσ² + ½ Σ (σ²/τ − ln σ²) / η
        let term = |i: usize, s: f64| {
            0.5 * c.diag[i] * s * s
                + c.rho * root_m / 6.0 * c.kappa[i] * s * s
                + 0.5 * (s * s / c.tau - (s * s).ln()) / c.eta
        };
        let grid = grid_argmin(cap, |a, b| term(0, a) + term(1, b));
        let star = solve_sigma_gaussian(&c.diag, &c.kappa, c.rho, c.eta, c.tau).unwrap();
        for i in 0..2 {
            assert!((star[i] - grid[i]).abs() <= STEP, "σ*={star:?} grid={grid:?}");
        }
    }
}
