//! Two-parameter loss landscape scans of the toy model.

use std::io::Write;

use anyhow::bail;
use rayon::prelude::*;

use pacgen::data::SampleBatch;
use pacgen::hessian::{exact_diag_hessian, DIAG_STEP, lambda_max, probe_rho_global};
use pacgen::metrics::{pacgen_at, MetricsConfig};
use pacgen::nn::{MlpModel, MlpObjective, Objective};
use pacgen::pacbayes::{evaluate_uniform, kappa, CurvatureMode, Curvature, PacBayesConfig};

pub const CSV_HEADER: [&str; 5] = ["w1", "w2", "loss", "pacgen", "bound"];
pub const MINIMA_HEADER: [&str; 10] = [
    "w1", "w2", "grid_w1", "grid_w2", "loss", "grad_norm", "lambda_max", "max_diag", "pacgen",
    "bound",
];

/// Half-width, in grid cells, of the window a grid minimum must dominate.
pub const MINIMUM_WINDOW: usize = 5;
/// A grid minimum must sit this far below the mean of its window's border.
pub const MINIMUM_PROMINENCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapeRow {
    pub w1: f64,
    pub w2: f64,
    /// Raw training loss.
    pub loss: f64,
    pub pacgen: f64,
    /// Uniform-perturbation bound total at the optimal scales.
    pub bound: f64,
}

/// Rows in row-major order: `w1` is the slow index.
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub axis: Vec<f64>,
    pub rows: Vec<LandscapeRow>,
}

impl Landscape {
    pub fn resolution(&self) -> usize {
        self.axis.len()
    }

    pub fn at(&self, i: usize, j: usize) -> &LandscapeRow {
        &self.rows[i * self.axis.len() + j]
    }

    pub fn cell_width(&self) -> f64 {
        self.axis[1] - self.axis[0]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> anyhow::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(CSV_HEADER)?;
        for r in &self.rows {
            wtr.write_record([r.w1, r.w2, r.loss, r.pacgen, r.bound].map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Settings shared by grid points and minima.
#[derive(Debug, Clone)]
pub struct PointEval<'a> {
    pub model: &'a MlpModel,
    pub train: &'a SampleBatch,
    pub bound: PacBayesConfig,
    pub metrics: MetricsConfig,
    pub seed: u64,
}

impl<'a> PointEval<'a> {
    /// Fails for anything but the two-parameter toy model.
    pub fn new(
        model: &'a MlpModel,
        train: &'a SampleBatch,
        bound: &PacBayesConfig,
        metrics: &MetricsConfig,
        seed: u64,
    ) -> anyhow::Result<Self> {
        if !model.is_toy() {
            bail!("landscape scans need the two-parameter toy model");
        }
        // Grid points are mostly not minima, so negative curvature is clamped.
        let bound = PacBayesConfig {
            curvature: CurvatureMode::Clamp,
            n: train.len(),
            ..bound.clone()
        };
        Ok(Self {
            model,
            train,
            bound,
            metrics: metrics.clone(),
            seed,
        })
    }

    pub fn raw(&self) -> MlpObjective<'a> {
        MlpObjective::raw(self.model, self.train)
    }

    pub fn row(&self, w: [f64; 2]) -> pacgen::Result<LandscapeRow> {
        let loss = self.raw().value(&w)?;
        let psi = pacgen_at(self.model, &w, self.train, &self.metrics, None, self.seed)?;
        Ok(LandscapeRow {
            w1: w[0],
            w2: w[1],
            loss,
            pacgen: psi,
            bound: self.bound_total(&w)?,
        })
    }

    pub fn bound_total(&self, w: &[f64]) -> pacgen::Result<f64> {
        let obj = MlpObjective::bounded(self.model, self.train);
        let diag = exact_diag_hessian(&obj, w)?;
        let k = kappa(w, self.bound.gamma, self.bound.epsilon);
        let rho = probe_rho_global(&obj, w, &k, self.seed)?;
        let report = evaluate_uniform(obj.value(w)?, w, &self.bound, &Curvature::exact(&diag, rho), None)?;
        Ok(report.total)
    }
}

/// Evaluate every point of a `resolution × resolution` grid over `range²`.
pub fn scan(eval: &PointEval<'_>, range: [f64; 2], resolution: usize) -> anyhow::Result<Landscape> {
    if resolution < 2 || !(range[0] < range[1]) {
        bail!("landscape needs resolution >= 2 and range lo < hi");
    }
    let step = (range[1] - range[0]) / (resolution - 1) as f64;
    let axis: Vec<f64> = (0..resolution).map(|k| range[0] + k as f64 * step).collect();
    let rows = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| eval.row([axis[k / resolution], axis[k % resolution]]))
        .collect::<pacgen::Result<Vec<_>>>()?;
    Ok(Landscape { axis, rows })
}

/// Interior grid cells whose loss is strictly below every other cell within
/// [`MINIMUM_WINDOW`] and at least [`MINIMUM_PROMINENCE`] below the mean of the
/// window border.
pub fn grid_minima(land: &Landscape) -> Vec<(usize, usize)> {
    let res = land.resolution() as i64;
    let r = MINIMUM_WINDOW as i64;
    let mut found = Vec::new();
    for i in 1..res - 1 {
        for j in 1..res - 1 {
            let v = land.at(i as usize, j as usize).loss;
            let mut lowest = true;
            let (mut border, mut count) = (0.0, 0.0);
            for di in -r..=r {
                for dj in -r..=r {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= res || b >= res || (di, dj) == (0, 0) {
                        continue;
                    }
                    let other = land.at(a as usize, b as usize).loss;
                    lowest &= other > v;
                    if di.abs() == r || dj.abs() == r {
                        border += other;
                        count += 1.0;
                    }
                }
            }
            if lowest && border / count - v > MINIMUM_PROMINENCE {
                found.push((i as usize, j as usize));
            }
        }
    }
    found
}

/// Central-difference Hessian, symmetrized. `m` gradient pairs, so only for
/// small `m`.
pub fn full_hessian<O: Objective + ?Sized>(obj: &O, w: &[f64]) -> pacgen::Result<Vec<Vec<f64>>> {
    let m = w.len();
    let mut h = vec![vec![0.0; m]; m];
    let mut p = w.to_vec();
    for j in 0..m {
        p[j] = w[j] + DIAG_STEP;
        let plus = obj.gradient(&p)?;
        p[j] = w[j] - DIAG_STEP;
        let minus = obj.gradient(&p)?;
        p[j] = w[j];
        for i in 0..m {
            h[i][j] = (plus[i] - minus[i]) / (2.0 * DIAG_STEP);
        }
    }
    for i in 0..m {
        for j in 0..i {
            let avg = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = avg;
            h[j][i] = avg;
        }
    }
    Ok(h)
}

/// Solve `h x = b` by Cholesky; `None` unless `h` is positive definite.
fn cholesky_solve(h: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let mut l = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = h[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; m];
    for i in 0..m {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        x[i] = (y[i] - (i + 1..m).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton until `‖∇‖ < tol`, stepping along the negative gradient
/// wherever the Hessian is not positive definite. Steps satisfy Armijo, or
/// at rounding level reduce the gradient without raising the loss. Stops
/// early once the line search fails or steps shrink below `1e-12`.
pub fn descend<O: Objective + ?Sized>(obj: &O, start: &[f64], tol: f64, max_iter: usize) -> pacgen::Result<Vec<f64>> {
    let mut w = start.to_vec();
    let (mut f, mut g) = obj.value_and_gradient(&w)?;
    for _ in 0..max_iter {
        let gn = norm(&g);
        if gn < tol {
            break;
        }
        let h = full_hessian(obj, &w)?;
        let dir = cholesky_solve(&h, &g).unwrap_or_else(|| g.clone());
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        let step = loop {
            let cand: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a - t * b).collect();
            let (fc, gc) = obj.value_and_gradient(&cand)?;
            let armijo = fc <= f - 1e-4 * t * slope;
            let rounding = fc <= f + 1e-12 * f.abs().max(1.0) && norm(&gc) < gn;
            if armijo || rounding {
                w = cand;
                f = fc;
                g = gc;
                break t * norm(&dir);
            }
            t *= 0.5;
            if t < 1e-10 {
                return Ok(w);
            }
        };
        if step < 1e-12 {
            break;
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    /// Refined location.
    pub w: [f64; 2],
    /// Grid cell the refinement started from.
    pub grid: [f64; 2],
    pub loss: f64,
    pub grad_norm: f64,
    pub lambda_max: f64,
    pub max_diag: f64,
    pub pacgen: f64,
    pub bound: f64,
}

/// Gradient norm below which a refined grid minimum counts as converged.
pub const CONVERGED_GRAD: f64 = 1e-6;

/// Grid minima refined by [`descend`], kept when the refinement converges
/// within one grid cell of where it started, deduplicated and sorted by loss.
/// Cells that slide further sit in shallow valleys the grid cannot resolve.
pub fn find_minima(eval: &PointEval<'_>, land: &Landscape) -> anyhow::Result<Vec<Minimum>> {
    let obj = eval.raw();
    let cell = land.cell_width();
    let cells = grid_minima(land);
    let refined = cells
        .par_iter()
        .map(|&(i, j)| {
            let grid = [land.axis[i], land.axis[j]];
            let w = descend(&obj, &grid, 1e-10, 200)?;
            let converged = norm(&obj.gradient(&w)?) < CONVERGED_GRAD;
            let near = (w[0] - grid[0]).abs() <= cell && (w[1] - grid[1]).abs() <= cell;
            Ok((converged && near).then_some((grid, [w[0], w[1]])))
        })
        .collect::<pacgen::Result<Vec<_>>>()?;
    let mut unique: Vec<([f64; 2], [f64; 2])> = Vec::new();
    for (grid, w) in refined.into_iter().flatten() {
        if !unique
            .iter()
            .any(|(_, u)| (u[0] - w[0]).abs() < 1e-3 && (u[1] - w[1]).abs() < 1e-3)
        {
            unique.push((grid, w));
        }
    }
    let mut minima = unique
        .par_iter()
        .map(|&(grid, w)| -> pacgen::Result<Minimum> {
            let row = eval.row(w)?;
            let g = obj.gradient(&w)?;
            let diag = exact_diag_hessian(&obj, &w)?;
            Ok(Minimum {
                w,
                grid,
                loss: row.loss,
                grad_norm: norm(&g),
                lambda_max: lambda_max(&obj, &w, 500, 1e-10, eval.seed)?.value,
                max_diag: diag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                pacgen: row.pacgen,
                bound: row.bound,
            })
        })
        .collect::<pacgen::Result<Vec<_>>>()?;
    minima.sort_by(|a, b| a.loss.total_cmp(&b.loss));
    Ok(minima)
}

/// The two lowest-loss minima as `(sharp, flat)`, ordered by `λ_max`.
pub fn sharp_and_flat(minima: &[Minimum]) -> Option<(Minimum, Minimum)> {
    match minima {
        [a, b, ..] if a.lambda_max >= b.lambda_max => Some((*a, *b)),
        [a, b, ..] => Some((*b, *a)),
        _ => None,
    }
}

pub fn write_minima_csv<W: Write>(out: W, minima: &[Minimum]) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(MINIMA_HEADER)?;
    for m in minima {
        let fields = [
            m.w[0], m.w[1], m.grid[0], m.grid[1], m.loss, m.grad_norm, m.lambda_max, m.max_diag,
            m.pacgen, m.bound,
        ];
        wtr.write_record(fields.map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
