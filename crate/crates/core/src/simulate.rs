//! Forward model: ground-truth depth/albedo to gated slices, sensor noise, procedural
//! scenes and lidar-style sparse sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AlbedoMap, DepthMap, GatedStack, Raster, SparseDepth, SparseSample};
use crate::error::{Error, Result};
use crate::profile::ProfileSet;
use crate::{MAX_DN, NUM_SLICES};

/// Poisson means below this are drawn by CDF inversion.
pub const POISSON_INVERSION_LIMIT: f64 = 64.0;

/// Poisson means at or above this are drawn from `N(mean, mean)`, rounded to the
/// nearest count. Relative error of the variance is O(1/mean) there.
pub const POISSON_GAUSSIAN_THRESHOLD: f64 = 1000.0;

/// Stream index used for the ambient frame's noise.
const AMBIENT_STREAM: u64 = NUM_SLICES as u64;

/// Words reserved per pixel in a ChaCha stream; far more than any sampler consumes.
const WORDS_PER_PIXEL_LOG2: u32 = 16;

/// Affine Poisson-Gaussian sensor noise: `z = a * Poisson(I / a) + N(0, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// DN per photon-equivalent.
    pub a: f64,
    /// Read-noise variance in DN².
    pub b: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid("a", format!("{} must be > 0", self.a)));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::invalid("b", format!("{} must be >= 0", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Passive offset added to every slice and used as the ambient frame, in DN.
    pub ambient_level: f64,
    /// Clip to `[0, 1023]` and round to integer DN.
    pub quantize: bool,
    /// Evaluate profiles at the nearest domain endpoint for out-of-domain depths
    /// instead of failing.
    pub clamp_to_domain: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            ambient_level: 0.0,
            quantize: false,
            clamp_to_domain: false,
        }
    }
}

/// Clip-then-round to a 10-bit DN.
#[inline]
pub fn quantize_dn(value: f64) -> f64 {
    value.clamp(0.0, MAX_DN).round()
}

/// Renders `alpha * C~_i(r) + ambient` per slice. Invalid-depth pixels see ambient only.
/// An ambient frame is attached only when `ambient_level` is non-zero, so an
/// ambient-free render can go straight into estimation.
pub fn render_slices(
    depth: &DepthMap,
    albedo: &AlbedoMap,
    profiles: &ProfileSet,
    opts: RenderOptions,
) -> Result<GatedStack> {
    if depth.dims() != albedo.dims() {
        return Err(Error::DimensionMismatch {
            field: "albedo".into(),
            expected: depth.dims(),
            found: albedo.dims(),
        });
    }
    if !opts.ambient_level.is_finite() {
        return Err(Error::invalid("ambient_level", "must be finite"));
    }
    let (lo, hi) = profiles.domain();
    if !opts.clamp_to_domain {
        if let Some(&r) = depth
            .values()
            .iter()
            .find(|r| !r.is_nan() && !(lo..=hi).contains(&(**r as f64)))
        {
            return Err(Error::OutOfDomain {
                range: r as f64,
                domain: (lo, hi),
            });
        }
    }

    let (w, h) = depth.dims();
    let pixels: Vec<[f64; NUM_SLICES]> = depth
        .values()
        .par_iter()
        .zip(albedo.values().par_iter())
        .map(|(&r, &alpha)| {
            let signal = if r.is_nan() {
                [0.0; NUM_SLICES]
            } else {
                let c = profiles.values_unchecked((r as f64).clamp(lo, hi));
                c.map(|ci| alpha as f64 * ci)
            };
            signal.map(|s| {
                let v = s + opts.ambient_level;
                if opts.quantize {
                    quantize_dn(v)
                } else {
                    v
                }
            })
        })
        .collect();

    let slice = |k: usize| Raster::new(w, h, pixels.iter().map(|p| p[k]).collect());
    let ambient_value = if opts.quantize {
        quantize_dn(opts.ambient_level)
    } else {
        opts.ambient_level
    };
    GatedStack::new(
        [slice(0)?, slice(1)?, slice(2)?],
        (opts.ambient_level != 0.0).then(|| Raster::filled(w, h, ambient_value)),
        profiles.delays_ns(),
        opts.quantize,
    )
}

/// Random stream for one pixel of one frame, addressed by counter so that draws do not
/// depend on the order pixels are visited.
fn pixel_rng(seed: u64, stream: u64, col: usize, row: usize) -> ChaCha8Rng {
    debug_assert!(col < 1 << 20 && row < 1 << 20);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let pixel = ((row as u128) << 20) | col as u128;
    rng.set_word_pos(pixel << WORDS_PER_PIXEL_LOG2);
    rng
}

/// Poisson draw: CDF inversion for small means, exact rejection sampling in between,
/// Gaussian approximation from [`POISSON_GAUSSIAN_THRESHOLD`].
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if !(mean > 0.0) {
        return 0.0;
    }
    if mean < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0u32;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf && k < 10_000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 {
                break;
            }
        }
        k as f64
    } else if mean < POISSON_GAUSSIAN_THRESHOLD {
        Poisson::new(mean)
            .expect("mean is positive and finite")
            .sample(rng)
    } else {
        let n: f64 = StandardNormal.sample(rng);
        (mean + mean.sqrt() * n).round().max(0.0)
    }
}

/// Noiseless-to-noisy draw for one pixel value, before clipping.
pub fn noisy_value<R: Rng + ?Sized>(intensity: f64, params: &NoiseParams, rng: &mut R) -> f64 {
    let counts = sample_poisson(intensity.max(0.0) / params.a, rng);
    let read: f64 = if params.b > 0.0 {
        let n: f64 = StandardNormal.sample(rng);
        params.b.sqrt() * n
    } else {
        0.0
    };
    params.a * counts + read
}

fn noisy_raster(raster: &Raster<f64>, params: &NoiseParams, stream: u64) -> Raster<f64> {
    let w = raster.width();
    let data: Vec<f64> = raster
        .data()
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut rng = pixel_rng(params.seed, stream, i % w, i / w);
            quantize_dn(noisy_value(v, params, &mut rng))
        })
        .collect();
    Raster::new(w, raster.height(), data).expect("same size as input")
}

/// Applies sensor noise to an unquantized stack and quantizes the result. The ambient
/// frame, if present, goes through the same noise model.
pub fn add_noise(stack: &GatedStack, params: &NoiseParams) -> Result<GatedStack> {
    params.validate()?;
    if stack.quantized {
        return Err(Error::invalid("stack", "noise must be applied before quantization"));
    }
    crate::domain::validate_stack(stack)?;
    let [s0, s1, s2] = &stack.slices;
    Ok(GatedStack {
        slices: [
            noisy_raster(s0, params, 0),
            noisy_raster(s1, params, 1),
            noisy_raster(s2, params, 2),
        ],
        ambient: stack
            .ambient
            .as_ref()
            .map(|a| noisy_raster(a, params, AMBIENT_STREAM)),
        delays_ns: stack.delays_ns,
        quantized: true,
    })
}

/// Removes the passive component using the ambient frame; the result has no ambient.
pub fn subtract_ambient(stack: &GatedStack, clamp_at_zero: bool) -> Result<GatedStack> {
    let ambient = stack.ambient.as_ref().ok_or(Error::MissingAmbientFrame)?;
    crate::domain::validate_stack(stack)?;
    let sub = |s: &Raster<f64>| {
        let data = s
            .data()
            .iter()
            .zip(ambient.data())
            .map(|(&v, &a)| if clamp_at_zero { (v - a).max(0.0) } else { v - a })
            .collect();
        Raster::new(s.width(), s.height(), data).expect("validated dims")
    };
    let [s0, s1, s2] = &stack.slices;
    Ok(GatedStack {
        slices: [sub(s0), sub(s1), sub(s2)],
        ambient: None,
        delays_ns: stack.delays_ns,
        quantized: stack.quantized && clamp_at_zero,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Plane,
    Staircase,
    Boxes,
    Road,
}

fn default_steps() -> usize {
    4
}

/// Procedural ground-truth scene description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub layout: Layout,
    pub depth_range: (f64, f64),
    pub albedo_range: (f64, f64),
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Number of depth steps for the staircase layout.
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (near, far) = self.depth_range;
        if !(near > 0.0 && near <= far && far.is_finite()) {
            return Err(Error::invalid(
                "depth_range",
                format!("[{near}, {far}] must satisfy 0 < near <= far"),
            ));
        }
        let (lo, hi) = self.albedo_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(
                "albedo_range",
                format!("[{lo}, {hi}] must lie within [0, 1]"),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("width/height", "must be positive"));
        }
        if self.layout == Layout::Staircase && self.steps == 0 {
            return Err(Error::invalid("steps", "must be positive"));
        }
        Ok(())
    }
}

struct SceneRng {
    rng: ChaCha8Rng,
    albedo: (f64, f64),
}

impl SceneRng {
    fn albedo(&mut self) -> f32 {
        let (lo, hi) = self.albedo;
        if hi > lo {
            self.rng.random_range(lo..=hi) as f32
        } else {
            lo as f32
        }
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            self.rng.random_range(lo..hi)
        } else {
            lo
        }
    }
}

/// Generates a ground-truth depth and albedo map, deterministic in `spec.seed`.
///
/// * `plane`: tilted plane, depth linear in the column from near to far.
/// * `staircase`: `steps` vertical bands at evenly spaced depths from near to far.
/// * `boxes`: background at far with up to eight fronto-parallel boxes in front.
/// * `road`: ground plane receding towards the horizon, boxes standing on it, and
///   invalid sky where the ground would exceed far.
pub fn gen_scene(spec: &SceneSpec) -> Result<(DepthMap, AlbedoMap)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (near, far) = spec.depth_range;
    let mut rng = SceneRng {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        albedo: spec.albedo_range,
    };
    let mut depth = vec![0.0f32; w * h];
    let mut albedo = vec![0.0f32; w * h];

    match spec.layout {
        Layout::Plane => {
            let a = rng.albedo();
            for row in 0..h {
                for col in 0..w {
                    let t = if w > 1 { col as f64 / (w - 1) as f64 } else { 0.0 };
                    depth[row * w + col] = (near + t * (far - near)) as f32;
                    albedo[row * w + col] = a;
                }
            }
        }
        Layout::Staircase => {
            let n = spec.steps;
            let levels: Vec<(f32, f32)> = (0..n)
                .map(|k| {
                    let t = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
                    ((near + t * (far - near)) as f32, rng.albedo())
                })
                .collect();
            for row in 0..h {
                for col in 0..w {
                    let k = (col * n / w).min(n - 1);
                    depth[row * w + col] = levels[k].0;
                    albedo[row * w + col] = levels[k].1;
                }
            }
        }
        Layout::Boxes => {
            let bg = rng.albedo();
            depth.fill(far as f32);
            albedo.fill(bg);
            let count = rng.rng.random_range(3..=8);
            for _ in 0..count {
                let bw = rng.rng.random_range(1..=w.div_ceil(2));
                let bh = rng.rng.random_range(1..=h.div_ceil(2));
                let x0 = rng.rng.random_range(0..=w - bw);
                let y0 = rng.rng.random_range(0..=h - bh);
                let d = rng.range(near, far) as f32;
                let a = rng.albedo();
                for row in y0..y0 + bh {
                    for col in x0..x0 + bw {
                        let i = row * w + col;
                        if d <= depth[i] {
                            depth[i] = d;
                            albedo[i] = a;
                        }
                    }
                }
            }
        }
        Layout::Road => {
            // depth ∝ 1 / (row - horizon); the bottom row sits at `near`
            let horizon = h as f64 * 0.3;
            let bottom = (h - 1) as f64;
            let ground = |row: usize| -> Option<f64> {
                let dy = row as f64 - horizon;
                if dy <= 0.0 {
                    return None;
                }
                let r = near * (bottom - horizon).max(1.0) / dy;
                (r <= far).then_some(r)
            };
            let road_albedo = rng.albedo();
            for row in 0..h {
                let r = ground(row);
                for col in 0..w {
                    let i = row * w + col;
                    depth[i] = r.map_or(DepthMap::INVALID, |r| r as f32);
                    albedo[i] = if r.is_some() { road_albedo } else { 0.0 };
                }
            }
            let count = rng.rng.random_range(2..=5);
            for _ in 0..count {
                let foot = rng.rng.random_range(0..h);
                let Some(d) = ground(foot) else { continue };
                let bw = rng.rng.random_range(1..=w.div_ceil(4));
                let bh = rng.rng.random_range(1..=h.div_ceil(3)).min(foot + 1);
                let x0 = rng.rng.random_range(0..=w - bw);
                let a = rng.albedo();
                for row in foot + 1 - bh..=foot {
                    for col in x0..x0 + bw {
                        let i = row * w + col;
                        if depth[i].is_nan() || d as f32 <= depth[i] {
                            depth[i] = d as f32;
                            albedo[i] = a;
                        }
                    }
                }
            }
        }
    }

    let valid = (near.min(far) as f32, far as f32);
    Ok((
        DepthMap::with_valid_range(w, h, depth, valid)?,
        AlbedoMap::new(w, h, albedo)?,
    ))
}

/// Horizontal scan-line sampling pattern of a rotating lidar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPattern {
    pub num_lines: usize,
    /// Rows between consecutive scan lines.
    pub line_spacing: usize,
    #[serde(default)]
    pub first_row: usize,
    pub column_stride: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl LidarPattern {
    /// 64 lines spread evenly over a frame of `height` rows (fewer if it is shorter).
    pub fn for_frame(height: usize, seed: u64) -> Self {
        let num_lines = height.clamp(1, 64);
        let line_spacing = (height / num_lines).max(1);
        Self {
            num_lines,
            line_spacing,
            first_row: line_spacing / 2,
            column_stride: 1,
            dropout: 0.0,
            seed,
        }
    }

    pub fn validate(&self, height: usize) -> Result<()> {
        if self.num_lines == 0 {
            return Err(Error::invalid("num_lines", "must be >= 1"));
        }
        if self.line_spacing == 0 || self.column_stride == 0 {
            return Err(Error::invalid("line_spacing/column_stride", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout", "must lie in [0, 1)"));
        }
        let last = self.first_row + (self.num_lines - 1) * self.line_spacing;
        if last >= height {
            return Err(Error::invalid(
                "num_lines",
                format!("last scan line at row {last} outside {height} rows"),
            ));
        }
        Ok(())
    }
}

pub fn sample_lidar(depth: &DepthMap, pattern: &LidarPattern) -> Result<SparseDepth> {
    pattern.validate(depth.height())?;
    let mut rng = ChaCha8Rng::seed_from_u64(pattern.seed);
    let mut samples = Vec::new();
    for line in 0..pattern.num_lines {
        let row = pattern.first_row + line * pattern.line_spacing;
        for col in (0..depth.width()).step_by(pattern.column_stride) {
            let keep = pattern.dropout == 0.0 || rng.random::<f64>() >= pattern.dropout;
            match depth.get(col, row) {
                Some(r) if keep && r > 0.0 => samples.push(SparseSample {
                    col,
                    row,
                    range_m: r as f64,
                }),
                _ => {}
            }
        }
    }
    SparseDepth::new(depth.width(), depth.height(), samples)
}
