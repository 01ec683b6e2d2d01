//! Projected Nelder-Mead on a 2-D box with a grid of starting points.

use serde::{Deserialize, Serialize};

use crate::model::ParamBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    /// Stop when every vertex lies within this distance of the best one.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting points per axis; `grid × grid` starts in total.
    pub grid: usize,
    /// Initial simplex edge as a fraction of the box width.
    pub step_frac: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 500, grid: 3, step_frac: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmOutcome {
    pub x: [f64; 2],
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiStartOutcome {
    pub best: NmOutcome,
    pub starts: usize,
    /// At least one start met the simplex tolerance.
    pub any_converged: bool,
}

fn clamp(p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// NaN objective values are treated as `+∞` so they never win a comparison.
fn eval<F: FnMut([f64; 2]) -> f64>(f: &mut F, p: [f64; 2]) -> f64 {
    let v = f(p);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` from `x0`; every trial point is clamped into the box.
///
/// Clamping can flatten the simplex onto a face, so the search restarts
/// from its terminal point until a restart no longer moves it.
pub fn nelder_mead<F: FnMut([f64; 2]) -> f64>(
    mut f: F,
    x0: [f64; 2],
    bounds: &ParamBox,
    cfg: &NelderMeadConfig,
) -> NmOutcome {
    let mut out = nm_single(&mut f, x0, bounds, cfg, cfg.max_iter);
    while out.converged && out.iterations < cfg.max_iter {
        let again = nm_single(&mut f, out.x, bounds, cfg, cfg.max_iter - out.iterations);
        let moved = dist(again.x, out.x) > cfg.tol && again.f < out.f;
        out = NmOutcome {
            x: if again.f <= out.f { again.x } else { out.x },
            f: again.f.min(out.f),
            iterations: out.iterations + again.iterations,
            converged: again.converged,
        };
        if !moved {
            break;
        }
    }
    out
}

fn nm_single<F: FnMut([f64; 2]) -> f64>(
    f: &mut F,
    x0: [f64; 2],
    bounds: &ParamBox,
    cfg: &NelderMeadConfig,
    max_iter: usize,
) -> NmOutcome {
    let lo = bounds.lower();
    let hi = bounds.upper();
    let x0 = clamp(x0, lo, hi);

    // Edges point toward the interior so a start on a face still spans 2-D.
    let mut simplex = [x0; 3];
    for d in 0..2 {
        let width = hi[d] - lo[d];
        let step = cfg.step_frac * width;
        let mid = 0.5 * (lo[d] + hi[d]);
        let sign = if x0[d] <= mid { 1.0 } else { -1.0 };
        simplex[d + 1][d] = (x0[d] + sign * step).clamp(lo[d], hi[d]);
    }
    let mut vals = simplex.map(|p| eval(f, p));

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        // Sort vertices by value, stable so ties keep their order.
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.map(|i| simplex[i]);
        vals = idx.map(|i| vals[i]);

        let diameter = dist(simplex[0], simplex[1]).max(dist(simplex[0], simplex[2]));
        if diameter <= cfg.tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let centroid = [
            0.5 * (simplex[0][0] + simplex[1][0]),
            0.5 * (simplex[0][1] + simplex[1][1]),
        ];
        let along = |t: f64| {
            clamp(
                [
                    centroid[0] + t * (simplex[2][0] - centroid[0]),
                    centroid[1] + t * (simplex[2][1] - centroid[1]),
                ],
                lo,
                hi,
            )
        };

        // A clamped trial point can fall on the line through the two kept
        // vertices; such a replacement would flatten the simplex for good.
        let base = simplex;
        let flat = |p: [f64; 2]| {
            let (u, v) = ([base[1][0] - base[0][0], base[1][1] - base[0][1]], [p[0] - base[0][0], p[1] - base[0][1]]);
            let area = (u[0] * v[1] - u[1] * v[0]).abs();
            area <= 1e-9 * diameter * diameter
        };
        let mut try_point = |p: [f64; 2]| if flat(p) { f64::INFINITY } else { eval(f, p) };

        let xr = along(-alpha);
        let fr = try_point(xr);
        if fr < vals[0] {
            let xe = along(-gamma);
            let fe = try_point(xe);
            if fe < fr {
                simplex[2] = xe;
                vals[2] = fe;
            } else {
                simplex[2] = xr;
                vals[2] = fr;
            }
            continue;
        }
        if fr < vals[1] {
            simplex[2] = xr;
            vals[2] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[2] {
            let xc = along(-rho);
            (xc, try_point(xc))
        } else {
            let xc = along(rho);
            (xc, try_point(xc))
        };
        if fc < vals[2].min(fr) {
            simplex[2] = xc;
            vals[2] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..3 {
            simplex[i] = [
                simplex[0][0] + sigma * (simplex[i][0] - simplex[0][0]),
                simplex[0][1] + sigma * (simplex[i][1] - simplex[0][1]),
            ];
            vals[i] = eval(f, simplex[i]);
        }
    }
    NmOutcome { x: simplex[0], f: vals[0], iterations, converged }
}

/// Starting points at fractions `(k+1)/(grid+1)` of each axis, row-major
/// with φ as the slow index.
pub fn grid_starts(bounds: &ParamBox, grid: usize) -> Vec<[f64; 2]> {
    let lo = bounds.lower();
    let hi = bounds.upper();
    let frac = |k: usize| (k + 1) as f64 / (grid + 1) as f64;
    let mut out = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            out.push([
                lo[0] + frac(i) * (hi[0] - lo[0]),
                lo[1] + frac(j) * (hi[1] - lo[1]),
            ]);
        }
    }
    out
}

/// Runs Nelder-Mead from every grid start and keeps the lowest terminal
/// value; the first start wins ties.
pub fn multistart<F: FnMut([f64; 2]) -> f64>(
    mut f: F,
    bounds: &ParamBox,
    cfg: &NelderMeadConfig,
) -> MultiStartOutcome {
    let starts = grid_starts(bounds, cfg.grid.max(1));
    let mut best: Option<NmOutcome> = None;
    let mut any_converged = false;
    for s in &starts {
        let out = nelder_mead(&mut f, *s, bounds, cfg);
        any_converged |= out.converged;
        if best.is_none_or(|b| out.f < b.f) {
            best = Some(out);
        }
    }
    MultiStartOutcome { best: best.expect("at least one start"), starts: starts.len(), any_converged }
}
