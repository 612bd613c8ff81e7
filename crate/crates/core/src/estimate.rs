//! Per-pixel least-squares reconstruction.
//!
//! For a measurement vector `z = [z1, z2, z3]` each pixel solves
//! `min_{r, alpha} || z - alpha * C~(r) ||²`. The problem is non-convex in `r`, so the
//! fit starts from the best local minima of a coarse range scan (with the optimal
//! albedo for each candidate), each refined jointly in `(r, alpha)` by
//! Levenberg-Marquardt.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AlbedoMap, DepthMap, GatedStack, Mask, Raster};
use crate::error::{Error, Result};
use crate::profile::ProfileSet;
use crate::NUM_SLICES;

/// Slice spread below which a pixel counts as not illuminated, in DN.
pub const ILLUMINATION_THRESHOLD_DN: f64 = 55.0;

/// Upper albedo bound during the fit; values above 1 absorb profile-scale error.
pub const DEFAULT_ALBEDO_MAX: f64 = 2.0;

/// Damping beyond which no step can reduce the cost at working precision.
const MAX_DAMPING: f64 = 1e12;

/// Number of coarse-scan minima refined per pixel.
const MAX_STARTS: usize = 3;

/// Albedo change below which a step counts as stalled (paired with the range tolerance).
const ALBEDO_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub init_grid_step_m: f64,
    pub max_iterations: u32,
    pub damping_init: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Stop once an accepted step moves the range by less than this.
    pub param_tolerance_m: f64,
    /// Stop once the cost falls below this, or an accepted step improves it by less
    /// than this fraction.
    pub residual_tolerance: f64,
    pub albedo_max: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            init_grid_step_m: 2.0,
            max_iterations: 50,
            damping_init: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            param_tolerance_m: 1e-4,
            residual_tolerance: 1e-8,
            albedo_max: DEFAULT_ALBEDO_MAX,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("init_grid_step_m", self.init_grid_step_m),
            ("damping_init", self.damping_init),
            ("damping_up", self.damping_up),
            ("damping_down", self.damping_down),
            ("param_tolerance_m", self.param_tolerance_m),
            ("residual_tolerance", self.residual_tolerance),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("{v} must be positive")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be positive"));
        }
        if !(self.damping_up > 1.0) || !(self.damping_down < 1.0) {
            return Err(Error::invalid(
                "damping_up/damping_down",
                "need damping_up > 1 and damping_down < 1",
            ));
        }
        if !(self.albedo_max >= 1.0 && self.albedo_max.is_finite()) {
            return Err(Error::invalid("albedo_max", "must be >= 1"));
        }
        Ok(())
    }
}

/// Fit outcome for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelEstimate {
    pub range_m: f64,
    pub albedo: f64,
    /// Final `||z - alpha C~(r)||²`.
    pub residual: f64,
    pub iterations: u32,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    /// Range at illuminated pixels, the invalid sentinel elsewhere.
    pub depth: DepthMap,
    pub albedo: AlbedoMap,
    pub residual: Raster<f64>,
    pub illuminated: Mask,
    pub iterations: Raster<u32>,
    pub converged: Mask,
}

#[inline]
fn dot(a: &[f64; NUM_SLICES], b: &[f64; NUM_SLICES]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cost(z: &[f64; NUM_SLICES], c: &[f64; NUM_SLICES], alpha: f64) -> f64 {
    (0..NUM_SLICES).map(|i| (z[i] - alpha * c[i]).powi(2)).sum()
}

/// `<z, c> / <c, c>` clamped to `[0, albedo_max]`; zero when `c` vanishes.
#[inline]
fn best_albedo(z: &[f64; NUM_SLICES], c: &[f64; NUM_SLICES], albedo_max: f64) -> f64 {
    let norm = dot(c, c);
    if norm > 0.0 {
        (dot(z, c) / norm).clamp(0.0, albedo_max)
    } else {
        0.0
    }
}

/// Exact minimizer of the per-pixel cost over albedo at fixed range, clamped to
/// `[0, albedo_max]`.
pub fn closed_form_albedo(
    z: &[f64; NUM_SLICES],
    profiles: &ProfileSet,
    range_m: f64,
    albedo_max: f64,
) -> Result<f64> {
    let (lo, hi) = profiles.domain();
    if !(lo..=hi).contains(&range_m) {
        return Err(Error::OutOfDomain {
            range: range_m,
            domain: (lo, hi),
        });
    }
    let c = profiles.values_unchecked(range_m);
    if dot(&c, &c) == 0.0 {
        return Err(Error::ZeroProfileNorm { range: range_m });
    }
    Ok(best_albedo(z, &c, albedo_max))
}

/// Best `(r, alpha, cost)` over `lo, lo + step, ...` with the domain's upper end
/// always included. The first (smallest) range wins ties.
fn scan(z: &[f64; NUM_SLICES], profiles: &ProfileSet, step: f64, albedo_max: f64) -> (f64, f64, f64) {
    let (lo, hi) = profiles.domain();
    let n = ((hi - lo) / step).floor() as usize;
    let mut best = (lo, 0.0, f64::INFINITY);
    let candidates = (0..=n)
        .map(|k| lo + k as f64 * step)
        .chain(std::iter::once(hi).filter(|&h| lo + n as f64 * step < h));
    for r in candidates {
        let c = profiles.values_unchecked(r);
        let alpha = best_albedo(z, &c, albedo_max);
        let e = cost(z, &c, alpha);
        if e < best.2 {
            best = (r, alpha, e);
        }
    }
    best
}

/// Exhaustive range scan at `r_step`, albedo bounded by [`DEFAULT_ALBEDO_MAX`].
pub fn grid_search_oracle(z: &[f64; NUM_SLICES], profiles: &ProfileSet, r_step: f64) -> Result<(f64, f64, f64)> {
    grid_search_oracle_bounded(z, profiles, r_step, DEFAULT_ALBEDO_MAX)
}

pub fn grid_search_oracle_bounded(
    z: &[f64; NUM_SLICES],
    profiles: &ProfileSet,
    r_step: f64,
    albedo_max: f64,
) -> Result<(f64, f64, f64)> {
    if !(r_step > 0.0 && r_step.is_finite()) {
        return Err(Error::invalid("r_step", "must be positive"));
    }
    Ok(scan(z, profiles, r_step, albedo_max))
}

/// Solves the damped 2x2 normal equations `(A + damping * D) x = -g`.
fn damped_step(a: [[f64; 2]; 2], g: [f64; 2], damping: f64) -> Option<[f64; 2]> {
    let floor = 1e-12 * (1.0 + a[0][0] + a[1][1]);
    let m00 = a[0][0] + damping * a[0][0].max(floor);
    let m11 = a[1][1] + damping * a[1][1].max(floor);
    let m01 = a[0][1];
    let det = m00 * m11 - m01 * m01;
    if !(det.is_finite() && det > 0.0) {
        return None;
    }
    Some([
        -(m11 * g[0] - m01 * g[1]) / det,
        -(m00 * g[1] - m01 * g[0]) / det,
    ])
}

/// The lowest local minima of the coarse range scan, best first (smaller range on
/// ties), at most [`MAX_STARTS`]. The scan's global best is always the first entry.
fn scan_starts(z: &[f64; NUM_SLICES], profiles: &ProfileSet, step: f64, albedo_max: f64) -> Vec<(f64, f64, f64)> {
    let (lo, hi) = profiles.domain();
    let n = ((hi - lo) / step).floor() as usize;
    let points: Vec<(f64, f64, f64)> = (0..=n)
        .map(|k| lo + k as f64 * step)
        .chain(std::iter::once(hi).filter(|&h| lo + n as f64 * step < h))
        .map(|r| {
            let c = profiles.values_unchecked(r);
            let alpha = best_albedo(z, &c, albedo_max);
            (r, alpha, cost(z, &c, alpha))
        })
        .collect();
    let mut minima: Vec<(f64, f64, f64)> = (0..points.len())
        .filter(|&k| {
            let e = points[k].2;
            (k == 0 || e < points[k - 1].2) && (k + 1 == points.len() || e <= points[k + 1].2)
        })
        .map(|k| points[k])
        .collect();
    // a plateau can hide the global best from the strict left comparison
    let best = points.iter().copied().fold(points[0], |b, p| if p.2 < b.2 { p } else { b });
    if !minima.iter().any(|m| m.0 == best.0) {
        minima.push(best);
    }
    minima.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.total_cmp(&b.0)));
    minima.truncate(MAX_STARTS);
    minima
}

/// Levenberg-Marquardt fit of one pixel, started from each of the best local minima
/// of a coarse range scan; the lowest final residual wins, earlier starts on ties.
/// Never fails: a non-converged fit returns the best iterate with
/// `converged == false`.
pub fn estimate_pixel_lm(z: &[f64; NUM_SLICES], profiles: &ProfileSet, opts: &LmOptions) -> PixelEstimate {
    let starts = scan_starts(z, profiles, opts.init_grid_step_m, opts.albedo_max);
    let mut best: Option<PixelEstimate> = None;
    for start in starts {
        let fit = refine(z, profiles, opts, start);
        if best.is_none_or(|b| fit.residual < b.residual) {
            best = Some(fit);
        }
    }
    best.expect("the scan yields at least one start")
}

fn refine(z: &[f64; NUM_SLICES], profiles: &ProfileSet, opts: &LmOptions, start: (f64, f64, f64)) -> PixelEstimate {
    let (lo, hi) = profiles.domain();
    let (mut r, mut alpha, mut current) = start;

    let mut damping = opts.damping_init;
    let mut iterations = 0;
    let mut converged = current <= opts.residual_tolerance;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;

        let (c, dc) = profiles.values_and_slopes_unchecked(r);
        // residual e = z - alpha c; de/dr = -alpha c', de/dalpha = -c
        let e: [f64; NUM_SLICES] = std::array::from_fn(|i| z[i] - alpha * c[i]);
        let jr: [f64; NUM_SLICES] = std::array::from_fn(|i| -alpha * dc[i]);
        let ja: [f64; NUM_SLICES] = std::array::from_fn(|i| -c[i]);
        let a = [[dot(&jr, &jr), dot(&jr, &ja)], [dot(&jr, &ja), dot(&ja, &ja)]];
        let g = [dot(&jr, &e), dot(&ja, &e)];
        if g[0] == 0.0 && g[1] == 0.0 {
            converged = true;
            break;
        }

        let Some(mut step) = damped_step(a, g, damping) else {
            damping *= opts.damping_up;
            if damping > MAX_DAMPING {
                converged = true;
                break;
            }
            continue;
        };
        // albedo pinned at a bound and pushed outwards: move the range alone
        if (alpha <= 0.0 && step[1] < 0.0) || (alpha >= opts.albedo_max && step[1] > 0.0) {
            let floor = 1e-12 * (1.0 + a[0][0]);
            step = [-g[0] / (a[0][0] + damping * a[0][0].max(floor)), 0.0];
        }
        let r_new = (r + step[0]).clamp(lo, hi);
        let alpha_new = (alpha + step[1]).clamp(0.0, opts.albedo_max);
        let c_new = profiles.values_unchecked(r_new);
        let trial = cost(z, &c_new, alpha_new);

        if trial < current {
            let dr = (r_new - r).abs();
            let da = (alpha_new - alpha).abs();
            let improvement = current - trial;
            r = r_new;
            alpha = alpha_new;
            current = trial;
            damping = (damping * opts.damping_down).max(1e-15);
            if current <= opts.residual_tolerance
                || (dr < opts.param_tolerance_m && da < ALBEDO_TOLERANCE)
                || improvement <= opts.residual_tolerance * (current + improvement)
            {
                converged = true;
            }
        } else {
            damping *= opts.damping_up;
            if damping > MAX_DAMPING {
                // no descent direction left within the bounds
                converged = true;
            }
        }
    }

    PixelEstimate {
        range_m: r,
        albedo: alpha,
        residual: current,
        iterations,
        converged,
    }
}

/// Illuminated iff `max(z) - min(z) >= threshold` over the three slices.
pub fn illumination_mask(stack: &GatedStack, threshold: f64) -> Mask {
    let (w, h) = stack.dims();
    let data = (0..w * h)
        .map(|i| {
            let z = stack.pixel(i);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = z.iter().copied().fold(f64::INFINITY, f64::min);
            max - min >= threshold
        })
        .collect();
    Mask::new(w, h, data).expect("stack dims")
}

/// Fits every pixel of an ambient-subtracted stack. Output is independent of the
/// number of worker threads.
pub fn estimate_depth(stack: &GatedStack, profiles: &ProfileSet, opts: &LmOptions) -> Result<EstimateResult> {
    crate::domain::validate_stack(stack)?;
    opts.validate()?;
    if stack.ambient.is_some() {
        return Err(Error::invalid(
            "stack",
            "ambient frame still attached; subtract it first",
        ));
    }
    let (w, h) = stack.dims();
    let fits: Vec<PixelEstimate> = (0..w * h)
        .into_par_iter()
        .map(|i| estimate_pixel_lm(&stack.pixel(i), profiles, opts))
        .collect();

    let illuminated = illumination_mask(stack, ILLUMINATION_THRESHOLD_DN);
    let depth_values = fits
        .iter()
        .zip(illuminated.values())
        .map(|(f, &lit)| if lit { f.range_m as f32 } else { DepthMap::INVALID })
        .collect();
    let (lo, hi) = profiles.domain();
    let depth = DepthMap::with_valid_range(w, h, depth_values, (lo as f32, hi as f32))?;
    let albedo = AlbedoMap::new(w, h, fits.iter().map(|f| f.albedo.clamp(0.0, 1.0) as f32).collect())?;
    Ok(EstimateResult {
        depth,
        albedo,
        residual: Raster::new(w, h, fits.iter().map(|f| f.residual).collect())?,
        illuminated,
        iterations: Raster::new(w, h, fits.iter().map(|f| f.iterations).collect())?,
        converged: Mask::new(w, h, fits.iter().map(|f| f.converged).collect())?,
    })
}
