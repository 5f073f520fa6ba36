//! Maximization of the rate-weighted local term `g(delta) = -rate * delta + log Z(delta)`
//! over `delta >= 0`.

use crate::error::{Error, Result};

const SLOPE_TOL: f64 = 1e-10;
const BRACKET_TOL: f64 = 1e-12;
const MAX_ITER: usize = 100;
const LINEAR_SEGMENTS: usize = 64;
const GEOMETRIC_POINTS: i32 = 40;

/// A smooth objective in the merge duration.
pub trait DurationObjective {
    fn value(&self, delta: f64) -> f64;
    fn slope(&self, delta: f64) -> f64;
    fn curvature(&self, delta: f64) -> f64;
    /// A point beyond which `slope` is negative everywhere.
    fn decreasing_beyond(&self) -> f64;
}

/// All local maxima on `[0, inf)`: the boundary when the slope at `0+` is
/// non-positive, plus every interior root where the slope crosses from
/// positive to negative on a scan of `[0, decreasing_beyond]`.
pub fn local_maxima<O: DurationObjective + ?Sized>(obj: &O) -> Result<Vec<f64>> {
    let hi = obj.decreasing_beyond();
    let mut out = Vec::new();
    let s0 = obj.slope(0.0);
    if !(s0 > 0.0) {
        out.push(0.0);
    }
    if !(hi > 0.0) {
        if out.is_empty() {
            out.push(0.0);
        }
        return Ok(out);
    }
    let mut grid: Vec<f64> = (0..=LINEAR_SEGMENTS)
        .map(|k| hi * k as f64 / LINEAR_SEGMENTS as f64)
        .chain((1..=GEOMETRIC_POINTS).map(|k| hi * 0.5f64.powi(k)))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut prev_x = grid[0];
    let mut prev_s = s0;
    for &x in &grid[1..] {
        let s = obj.slope(x);
        if prev_s > 0.0 && !(s > 0.0) {
            out.push(refine_root(obj, prev_x, x)?);
        }
        prev_x = x;
        prev_s = s;
    }
    if out.is_empty() {
        // slope positive across the whole scan cannot happen for a valid bound
        return Err(Error::Solver(format!(
            "no maximum located below the monotone bound {hi}"
        )));
    }
    Ok(out)
}

/// Location of the global maximum over `delta >= 0`; ties go to the smaller duration.
pub fn global_max<O: DurationObjective + ?Sized>(obj: &O) -> Result<f64> {
    let cands = local_maxima(obj)?;
    let mut best = cands[0];
    let mut best_v = obj.value(best);
    for &c in &cands[1..] {
        let v = obj.value(c);
        if v > best_v || (best_v.is_nan() && !v.is_nan()) {
            best = c;
            best_v = v;
        }
    }
    Ok(best)
}

/// Safeguarded Newton on the slope inside a bracket with `slope(a) > 0 >= slope(b)`.
fn refine_root<O: DurationObjective + ?Sized>(obj: &O, mut a: f64, mut b: f64) -> Result<f64> {
    let mut x = 0.5 * (a + b);
    for _ in 0..MAX_ITER {
        let s = obj.slope(x);
        if s.abs() < SLOPE_TOL {
            return Ok(x);
        }
        if s > 0.0 {
            a = x;
        } else {
            b = x;
        }
        if b - a < BRACKET_TOL {
            return Ok(0.5 * (a + b));
        }
        let c = obj.curvature(x);
        let newton = x - s / c;
        x = if c < 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    Err(Error::Solver(format!(
        "duration search did not converge in {MAX_ITER} iterations (bracket [{a}, {b}])"
    )))
}
