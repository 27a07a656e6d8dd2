//! Bounded derivative-free minimization in log-parameter space.
//!
//! A log-spaced grid search picks a starting point, then Nelder-Mead refines
//! it. Working in `ln x` makes the step tolerance relative and keeps every
//! iterate positive; coordinates are clamped to the bounds.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("bounds", "lower and upper must have the same non-zero length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(*l > 0.0 && l < u && u.is_finite())) {
            return Err(invalid("bounds", "need 0 < lower < upper < inf in every dimension"));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn clamp_log(&self, y: &mut [f64]) {
        for (k, v) in y.iter_mut().enumerate() {
            *v = v.clamp(self.lower[k].ln(), self.upper[k].ln());
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(k, v)| *v >= self.lower[k] && *v <= self.upper[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Objective values on a log-spaced tensor grid, first axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScan {
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl GridScan {
    fn node(&self, mut flat: usize) -> Vec<usize> {
        self.axes
            .iter()
            .map(|a| {
                let i = flat % a.len();
                flat /= a.len();
                i
            })
            .collect()
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).rev().fold(0, |acc, (i, a)| acc * a.len() + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.node(flat).iter().zip(&self.axes).map(|(&i, a)| a[i]).collect()
    }

    pub fn best(&self) -> Minimum {
        let (k, v) = self.values.iter().enumerate().fold((0, f64::INFINITY), |b, (k, &v)| if v < b.1 { (k, v) } else { b });
        Minimum { x: self.point(k), value: v, evaluations: self.values.len(), converged: true }
    }

    /// Nodes no larger than any neighbor (including diagonals), best first.
    pub fn local_minima(&self) -> Vec<usize> {
        let d = self.axes.len();
        let mut out: Vec<usize> = (0..self.values.len())
            .filter(|&k| {
                let v = self.values[k];
                if !v.is_finite() {
                    return false;
                }
                let idx = self.node(k);
                (0..3usize.pow(d as u32)).all(|code| {
                    let mut c = code;
                    let mut nb = idx.clone();
                    for (a, n) in nb.iter_mut().enumerate() {
                        let step = (c % 3) as isize - 1;
                        c /= 3;
                        let m = *n as isize + step;
                        if m < 0 || m >= self.axes[a].len() as isize {
                            return true;
                        }
                        *n = m as usize;
                    }
                    self.values[self.flat(&nb)] >= v
                })
            })
            .collect();
        out.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        out
    }
}

/// Evaluates `f` on `points` log-spaced nodes per dimension.
pub fn log_grid_scan(f: &mut impl FnMut(&[f64]) -> f64, bounds: &Bounds, points: usize) -> GridScan {
    let d = bounds.dim();
    let points = points.max(2);
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let (lo, hi) = (bounds.lower[k].ln(), bounds.upper[k].ln());
            (0..points).map(|n| (lo + (hi - lo) * n as f64 / (points - 1) as f64).exp()).collect()
        })
        .collect();
    let total = points.pow(d as u32);
    let mut scan = GridScan { axes, values: Vec::with_capacity(total) };
    for k in 0..total {
        let x = scan.point(k);
        let v = f(&x);
        scan.values.push(if v.is_nan() { f64::INFINITY } else { v });
    }
    scan
}

/// Best node of [`log_grid_scan`].
pub fn log_grid_search(f: &mut impl FnMut(&[f64]) -> f64, bounds: &Bounds, points: usize) -> Minimum {
    log_grid_scan(f, bounds, points).best()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    /// Stop once every vertex lies within this relative distance of the best one.
    pub rel_tol: f64,
    pub max_evaluations: usize,
    /// Initial simplex edge in log units.
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig { rel_tol: 1e-4, max_evaluations: 500, initial_step: 0.1 }
    }
}

/// Nelder-Mead on `ln x` with clamping to `bounds`.
///
/// A collapsed simplex is restarted around its best vertex until a restart no
/// longer moves it by more than the tolerance or the budget runs out; long
/// curved valleys otherwise stall the first simplex far from the minimum.
pub fn nelder_mead_log(f: &mut impl FnMut(&[f64]) -> f64, start: &[f64], bounds: &Bounds, config: &NelderMeadConfig) -> Minimum {
    let mut y: Vec<f64> = start.iter().map(|v| v.ln()).collect();
    bounds.clamp_log(&mut y);
    let mut evals = 0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let budget = config.max_evaluations.saturating_sub(evals);
        if budget == 0 {
            break;
        }
        let (y_new, v_new, used, collapsed) = simplex_run(f, &y, bounds, config, budget);
        evals += used;
        let moved = y_new.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let improved = best.as_ref().is_none_or(|(_, v)| v_new < *v);
        if improved {
            best = Some((y_new.clone(), v_new));
            y = y_new;
        }
        if !collapsed {
            break;
        }
        if !improved || moved < config.rel_tol {
            let (y, value) = best.expect("at least one run");
            return Minimum { x: y.iter().map(|v| v.exp()).collect(), value, evaluations: evals, converged: true };
        }
    }
    let (y, value) = best.unwrap_or_else(|| (y.clone(), f64::INFINITY));
    Minimum { x: y.iter().map(|v| v.exp()).collect(), value, evaluations: evals, converged: false }
}

/// One simplex run from `y0` (log space). Returns the best vertex, its value,
/// evaluations used and whether the simplex collapsed below the tolerance.
fn simplex_run(
    f: &mut impl FnMut(&[f64]) -> f64,
    y0: &[f64],
    bounds: &Bounds,
    config: &NelderMeadConfig,
    budget: usize,
) -> (Vec<f64>, f64, usize, bool) {
    let d = bounds.dim();
    let mut evals = 0usize;
    let mut eval = |y: &[f64], evals: &mut usize| {
        *evals += 1;
        let x: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let v = f(&x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let y0 = y0.to_vec();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let v0 = eval(&y0, &mut evals);
    simplex.push((y0.clone(), v0));
    for k in 0..d {
        let mut y = y0.clone();
        let (lo, hi) = (bounds.lower[k].ln(), bounds.upper[k].ln());
        // step inward if the start sits on the upper bound
        y[k] = if y[k] + config.initial_step <= hi { y[k] + config.initial_step } else { (y[k] - config.initial_step).max(lo) };
        let v = eval(&y, &mut evals);
        simplex.push((y, v));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[1..].iter().flat_map(|(y, _)| y.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        if spread < config.rel_tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|k| simplex[..d].iter().map(|(y, _)| y[k]).sum::<f64>() / d as f64).collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> {
            let mut y: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect();
            bounds.clamp_log(&mut y);
            y
        };

        let yr = along(alpha);
        let vr = eval(&yr, &mut evals);
        if vr < simplex[0].1 {
            let ye = along(gamma);
            let ve = eval(&ye, &mut evals);
            simplex[d] = if ve < vr { (ye, ve) } else { (yr, vr) };
        } else if vr < simplex[d - 1].1 {
            simplex[d] = (yr, vr);
        } else {
            let (yc, vc) = if vr < worst.1 {
                let y = along(rho);
                let v = eval(&y, &mut evals);
                (y, v)
            } else {
                let y = along(-rho);
                let v = eval(&y, &mut evals);
                (y, v)
            };
            if vc < worst.1.min(vr) {
                simplex[d] = (yc, vc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    for (x, b) in vertex.0.iter_mut().zip(&best) {
                        *x = b + sigma * (*x - b);
                    }
                    vertex.1 = eval(&vertex.0, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (y, value) = simplex.swap_remove(0);
    (y, value, evals, converged)
}
