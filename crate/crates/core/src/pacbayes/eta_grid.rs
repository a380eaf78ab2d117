use super::bound::BoundReport;
use crate::error::Result;

/// Union-bound weight `2^{−(j+1)}` of grid point `j`.
pub fn grid_weight(j: u32) -> f64 {
    0.5f64.powi(j as i32 + 1)
}

/// `(η_j, δ_j)` with `δ_j = δ 2^{−(j+1)}` and `η_j = e^j √(2n ln 1/δ_j)`.
pub fn eta_grid_point(j: u32, n: usize, delta: f64) -> (f64, f64) {
    let delta_j = delta * grid_weight(j);
    let eta = (j as f64).exp() * (2.0 * n as f64 * (1.0 / delta_j).ln()).sqrt();
    (eta, delta_j)
}

/// Smallest `j` with `j ≥ ⌊½ ln(S / ln(1/δ_j) + 1)⌋`, where `S` is the KL
/// term. The right side grows only logarithmically in `j`, so the search
/// terminates quickly.
pub fn select_grid_index(kl_sum: f64, delta: f64) -> u32 {
    let kl_sum = kl_sum.max(0.0);
    (0u32..)
        .find(|&j| {
            let log_inv = (1.0 / (delta * grid_weight(j))).ln();
            let target = (0.5 * (kl_sum / log_inv + 1.0).ln()).floor();
            j as f64 >= target
        })
        .expect("grid index search is unbounded")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaGridChoice {
    pub j: u32,
    pub eta: f64,
    pub delta_j: f64,
    pub report: BoundReport,
    /// Grid point with the smallest total among `0..=max_j`.
    pub argmin_j: u32,
    pub argmin_report: BoundReport,
}

/// Evaluate `bound_fn(η_j, δ_j)` at the selected grid index and report the
/// plain argmin over `0..=max_j` alongside it.
pub fn optimize_eta_grid<F>(
    n: usize,
    delta: f64,
    max_j: u32,
    kl_sum: f64,
    bound_fn: F,
) -> Result<EtaGridChoice>
where
    F: Fn(f64, f64) -> Result<BoundReport>,
{
    let j = select_grid_index(kl_sum, delta);
    let (eta, delta_j) = eta_grid_point(j, n, delta);
    let report = bound_fn(eta, delta_j)?;
    let mut best: Option<(u32, BoundReport)> = None;
    for k in 0..=max_j.max(j) {
        let (e, d) = eta_grid_point(k, n, delta);
        let r = if k == j { report.clone() } else { bound_fn(e, d)? };
        if best.as_ref().map_or(true, |(_, b)| r.total < b.total) {
            best = Some((k, r));
        }
    }
    let (argmin_j, argmin_report) = best.expect("grid is nonempty");
    Ok(EtaGridChoice {
        j,
        eta,
        delta_j,
        report,
        argmin_j,
        argmin_report,
    })
}
