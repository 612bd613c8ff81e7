//! Depth-regression losses: multi-scale masked L1 over binned depth and an
//! image-gradient-weighted total-variation smoothness term.

use serde::{Deserialize, Serialize};

use crate::domain::{DepthMap, Mask, Raster, SparseDepth};
use crate::error::{Error, Result};
use crate::metrics::pairwise_sum;

/// Number of scales in the multi-scale loss (`1, 1/2, 1/4`).
pub const NUM_SCALES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiScaleWeights {
    /// Per-scale weights, full resolution first.
    pub scale_weights: [f64; NUM_SCALES],
    /// Weight of the smoothness term in the combined loss.
    pub smoothness: f64,
    /// Weight of the adversarial term. Kept for reference; no adversarial term is
    /// evaluated here.
    pub adversarial: f64,
    /// Multiplier on the vertical smoothness term.
    pub vertical_bias: f64,
    /// Guide-gradient normalization `s` in `exp(-|dz| / s)`, in DN.
    pub gradient_scale_dn: f64,
}

impl Default for MultiScaleWeights {
    fn default() -> Self {
        Self {
            scale_weights: [1.0, 0.8, 0.6],
            smoothness: 1e-4,
            adversarial: 1e-3,
            vertical_bias: 1.5,
            gradient_scale_dn: 100.0,
        }
    }
}

impl MultiScaleWeights {
    pub fn validate(&self) -> Result<()> {
        let extra = [self.smoothness, self.adversarial];
        if self.scale_weights.iter().chain(&extra).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights", "must be finite and >= 0"));
        }
        if !(self.vertical_bias >= 1.0 && self.vertical_bias.is_finite()) {
            return Err(Error::invalid("vertical_bias", "must be >= 1"));
        }
        if !(self.gradient_scale_dn > 0.0 && self.gradient_scale_dn.is_finite()) {
            return Err(Error::invalid("gradient_scale_dn", "must be positive"));
        }
        Ok(())
    }
}

/// Supervision target for [`multiscale_loss`].
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Dense map, supervised wherever a bin holds at least one valid pixel.
    Dense(&'a DepthMap),
    /// Lidar points, supervised only at bins containing a sample.
    Sparse(&'a SparseDepth),
}

fn binned_dims(width: usize, height: usize, level: u32) -> (usize, usize, usize) {
    let f = 1usize << level;
    (f, width.div_ceil(f), height.div_ceil(f))
}

/// Averages valid pixels over `2^level` square blocks. Frames whose size is not a
/// multiple of the block are padded with invalid pixels, so edge bins average fewer
/// pixels. Blocks with no valid pixel become invalid.
pub fn bin_depth(depth: &DepthMap, level: u32) -> DepthMap {
    if level == 0 {
        return depth.clone();
    }
    let (f, bw, bh) = binned_dims(depth.width(), depth.height(), level);
    let (w, h) = depth.dims();
    let mut out = Vec::with_capacity(bw * bh);
    for by in 0..bh {
        for bx in 0..bw {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for row in by * f..((by + 1) * f).min(h) {
                for col in bx * f..((bx + 1) * f).min(w) {
                    if let Some(v) = depth.get(col, row) {
                        sum += v as f64;
                        n += 1;
                    }
                }
            }
            out.push(if n > 0 { (sum / n as f64) as f32 } else { DepthMap::INVALID });
        }
    }
    DepthMap::with_valid_range(bw, bh, out, depth.valid_range())
        .expect("block means stay inside the source range")
}

/// Averages sparse samples per `2^level` bin; the mask marks bins holding a sample.
pub fn bin_sparse(sparse: &SparseDepth, level: u32) -> (DepthMap, Mask) {
    let (f, bw, bh) = binned_dims(sparse.frame_width(), sparse.frame_height(), level);
    let mut sum = vec![0.0f64; bw * bh];
    let mut count = vec![0usize; bw * bh];
    for s in sparse.samples() {
        let i = (s.row / f) * bw + s.col / f;
        sum[i] += s.range_m;
        count[i] += 1;
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n > 0 { (s / n as f64) as f32 } else { DepthMap::INVALID })
        .collect();
    let mask = Mask::new(bw, bh, count.iter().map(|&n| n > 0).collect()).expect("bin dims");
    let depth = DepthMap::new(bw, bh, values).expect("positive sample ranges");
    (depth, mask)
}

/// Mean of `|pred - target|` over masked bins.
pub fn masked_l1(pred: &DepthMap, target: &DepthMap, mask: &Mask) -> Result<f64> {
    pred.raster().check_dims(target.raster(), "target")?;
    pred.raster().check_dims(mask.raster(), "mask")?;
    let mut terms = Vec::with_capacity(mask.count());
    for (i, _) in mask.values().iter().enumerate().filter(|(_, m)| **m) {
        let (p, t) = (pred.values()[i], target.values()[i]);
        if p.is_nan() || t.is_nan() {
            return Err(Error::InvalidPrediction { index: i });
        }
        terms.push((p as f64 - t as f64).abs());
    }
    if terms.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// `sum_i lambda_i * L1(bin(pred, i), bin(target, i))` over the three scales.
pub fn multiscale_loss(pred: &DepthMap, target: Target<'_>, weights: &MultiScaleWeights) -> Result<f64> {
    weights.validate()?;
    let target_dims = match target {
        Target::Dense(d) => d.dims(),
        Target::Sparse(s) => s.dims(),
    };
    if target_dims != pred.dims() {
        return Err(Error::DimensionMismatch {
            field: "target".into(),
            expected: pred.dims(),
            found: target_dims,
        });
    }
    let mut total = 0.0;
    for (level, &lambda) in weights.scale_weights.iter().enumerate() {
        let level = level as u32;
        let (binned_target, mask) = match target {
            Target::Dense(d) => {
                let b = bin_depth(d, level);
                let m = b.valid_mask();
                (b, m)
            }
            Target::Sparse(s) => bin_sparse(s, level),
        };
        total += lambda * masked_l1(&bin_depth(pred, level), &binned_target, &mask)?;
    }
    Ok(total)
}

/// `(1/N) sum |dx d| exp(-|dx z|/s) + bias * |dy d| exp(-|dy z|/s)` with forward
/// differences over the `(w-1)(h-1)` pixels where both differences exist.
pub fn smoothness_loss(pred: &DepthMap, guide: &Raster<f64>, weights: &MultiScaleWeights) -> Result<f64> {
    weights.validate()?;
    pred.raster().check_dims(guide, "guide")?;
    if let Some(i) = pred.values().iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidPrediction { index: i });
    }
    let (w, h) = pred.dims();
    if w < 2 || h < 2 {
        return Ok(0.0);
    }
    let s = weights.gradient_scale_dn;
    let d = |c: usize, r: usize| *pred.raster().get(c, r) as f64;
    let z = |c: usize, r: usize| *guide.get(c, r);
    let mut terms = Vec::with_capacity((w - 1) * (h - 1));
    for row in 0..h - 1 {
        for col in 0..w - 1 {
            let dx = (d(col + 1, row) - d(col, row)).abs();
            let dy = (d(col, row + 1) - d(col, row)).abs();
            let gx = (z(col + 1, row) - z(col, row)).abs();
            let gy = (z(col, row + 1) - z(col, row)).abs();
            terms.push(dx * (-gx / s).exp() + weights.vertical_bias * dy * (-gy / s).exp());
        }
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// Multi-scale term plus the weighted smoothness term.
pub fn combined_loss(
    pred: &DepthMap,
    target: Target<'_>,
    guide: &Raster<f64>,
    weights: &MultiScaleWeights,
) -> Result<f64> {
    Ok(multiscale_loss(pred, target, weights)? + weights.smoothness * smoothness_loss(pred, guide, weights)?)
}
