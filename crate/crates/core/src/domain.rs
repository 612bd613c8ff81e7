//! Shared raster types. All rasters are row-major with the origin at the top-left pixel.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::{MAX_DN, NUM_SLICES};

/// Row-major 2-D grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T> Raster<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                field: "raster data".into(),
                expected: (width, height),
                found: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> &T {
        &self.data[row * self.width + col]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub(crate) fn check_dims<U>(&self, other: &Raster<U>, field: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                field: field.into(),
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

/// Three co-registered gated slices plus an optional ambient (laser-off) frame, in DN.
///
/// Quantized stacks hold integral values in `[0, 1023]`. Float stacks straight out of
/// the renderer carry `quantized == false` and may exceed that range until clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedStack {
    pub slices: [Raster<f64>; NUM_SLICES],
    pub ambient: Option<Raster<f64>>,
    /// Gate delays in nanoseconds, one per slice.
    pub delays_ns: [f64; NUM_SLICES],
    pub quantized: bool,
}

impl GatedStack {
    pub fn new(
        slices: [Raster<f64>; NUM_SLICES],
        ambient: Option<Raster<f64>>,
        delays_ns: [f64; NUM_SLICES],
        quantized: bool,
    ) -> Result<Self> {
        let stack = Self {
            slices,
            ambient,
            delays_ns,
            quantized,
        };
        validate_stack(&stack)?;
        Ok(stack)
    }

    pub fn width(&self) -> usize {
        self.slices[0].width()
    }

    pub fn height(&self) -> usize {
        self.slices[0].height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.slices[0].dims()
    }

    /// Measurement vector `[z1, z2, z3]` at a flat pixel index.
    #[inline]
    pub fn pixel(&self, index: usize) -> [f64; NUM_SLICES] {
        [
            self.slices[0].data()[index],
            self.slices[1].data()[index],
            self.slices[2].data()[index],
        ]
    }

    /// Sum of the three slices, the "full gated image" used to guide smoothness.
    pub fn full_image(&self) -> Raster<f64> {
        let (w, h) = self.dims();
        Raster::from_fn(w, h, |c, r| {
            let i = r * w + c;
            self.pixel(i).iter().sum()
        })
    }
}

/// Checks every [`GatedStack`] invariant and names the offending field on failure.
pub fn validate_stack(stack: &GatedStack) -> Result<()> {
    let dims = stack.slices[0].dims();
    for (i, slice) in stack.slices.iter().enumerate() {
        if slice.dims() != dims {
            return Err(Error::DimensionMismatch {
                field: format!("slices[{}]", i + 1),
                expected: dims,
                found: slice.dims(),
            });
        }
    }
    if let Some(ambient) = &stack.ambient {
        if ambient.dims() != dims {
            return Err(Error::DimensionMismatch {
                field: "ambient".into(),
                expected: dims,
                found: ambient.dims(),
            });
        }
    }

    let named = stack
        .slices
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("slices[{}]", i + 1), s))
        .chain(stack.ambient.iter().map(|a| ("ambient".to_string(), a)));
    for (field, raster) in named {
        for (index, &value) in raster.data().iter().enumerate() {
            let ok = if stack.quantized {
                (0.0..=MAX_DN).contains(&value) && value.fract() == 0.0
            } else {
                value.is_finite()
            };
            if !ok {
                return Err(Error::DnOutOfRange {
                    field,
                    index,
                    value,
                });
            }
        }
    }

    let d = stack.delays_ns;
    if !d.iter().all(|x| x.is_finite()) || !(d[0] < d[1] && d[1] < d[2]) {
        return Err(Error::NonMonotoneDelays(d));
    }
    Ok(())
}

/// Dense per-pixel range in meters. Unmeasured pixels hold [`DepthMap::INVALID`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    raster: Raster<f32>,
    valid_range: (f32, f32),
}

impl DepthMap {
    /// Sentinel for pixels without a depth value. 0 m is a legitimate range, so a
    /// NaN is reserved instead; every NaN is normalized to this exact bit pattern.
    pub const INVALID: f32 = f32::NAN;

    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        Self::with_valid_range(width, height, values, (0.0, f32::INFINITY))
    }

    pub fn with_valid_range(
        width: usize,
        height: usize,
        mut values: Vec<f32>,
        valid_range: (f32, f32),
    ) -> Result<Self> {
        let (lo, hi) = valid_range;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid(
                "valid_range",
                format!("[{lo}, {hi}] is not an interval"),
            ));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if v.is_nan() {
                *v = Self::INVALID;
            } else if !(lo..=hi).contains(v) || v.is_infinite() {
                return Err(Error::invalid(
                    "depth",
                    format!("value {v} at index {i} outside [{lo}, {hi}] m"),
                ));
            }
        }
        Ok(Self {
            raster: Raster::new(width, height, values)?,
            valid_range,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.raster.dims()
    }

    pub fn valid_range(&self) -> (f32, f32) {
        self.valid_range
    }

    pub fn values(&self) -> &[f32] {
        self.raster.data()
    }

    pub fn raster(&self) -> &Raster<f32> {
        &self.raster
    }

    /// Range at a pixel, `None` for the invalid sentinel.
    pub fn get(&self, col: usize, row: usize) -> Option<f32> {
        let v = *self.raster.get(col, row);
        (!v.is_nan()).then_some(v)
    }

    pub fn valid_count(&self) -> usize {
        self.values().iter().filter(|v| !v.is_nan()).count()
    }

    pub fn valid_mask(&self) -> Mask {
        Mask::from_raster(self.raster.map(|v| !v.is_nan()))
    }
}

/// Per-pixel reflectance, unitless in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlbedoMap {
    raster: Raster<f32>,
}

impl AlbedoMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(
                "albedo",
                format!("value {v} at index {i} outside [0, 1]"),
            ));
        }
        Ok(Self {
            raster: Raster::new(width, height, values)?,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.raster.dims()
    }

    pub fn values(&self) -> &[f32] {
        self.raster.data()
    }

    pub fn raster(&self) -> &Raster<f32> {
        &self.raster
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseSample {
    pub col: usize,
    pub row: usize,
    pub range_m: f64,
}

/// Lidar-style sparse depth: a set of `(col, row, range)` samples on a pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepth {
    samples: Vec<SparseSample>,
    frame_width: usize,
    frame_height: usize,
}

impl SparseDepth {
    pub fn new(frame_width: usize, frame_height: usize, samples: Vec<SparseSample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.col >= frame_width || s.row >= frame_height {
                return Err(Error::SampleOutOfFrame {
                    col: s.col,
                    row: s.row,
                    width: frame_width,
                    height: frame_height,
                });
            }
            if !(s.range_m > 0.0 && s.range_m.is_finite()) {
                return Err(Error::NonPositiveRange {
                    col: s.col,
                    row: s.row,
                    range: s.range_m,
                });
            }
            if !seen.insert((s.col, s.row)) {
                return Err(Error::DuplicateSample {
                    col: s.col,
                    row: s.row,
                });
            }
        }
        Ok(Self {
            samples,
            frame_width,
            frame_height,
        })
    }

    pub fn samples(&self) -> &[SparseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn frame_width(&self) -> usize {
        self.frame_width
    }

    pub fn frame_height(&self) -> usize {
        self.frame_height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.frame_width, self.frame_height)
    }

    /// Every valid pixel of a dense map as a sample.
    pub fn from_dense(depth: &DepthMap) -> Self {
        let w = depth.width();
        let samples = depth
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan() && **v > 0.0)
            .map(|(i, &v)| SparseSample {
                col: i % w,
                row: i / w,
                range_m: v as f64,
            })
            .collect();
        Self {
            samples,
            frame_width: w,
            frame_height: depth.height(),
        }
    }
}

/// Per-pixel boolean selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    raster: Raster<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        Ok(Self {
            raster: Raster::new(width, height, values)?,
        })
    }

    pub fn from_raster(raster: Raster<bool>) -> Self {
        Self { raster }
    }

    pub fn all(width: usize, height: usize, value: bool) -> Self {
        Self {
            raster: Raster::filled(width, height, value),
        }
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.raster.dims()
    }

    pub fn values(&self) -> &[bool] {
        self.raster.data()
    }

    pub fn raster(&self) -> &Raster<bool> {
        &self.raster
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        *self.raster.get(col, row)
    }

    pub fn len(&self) -> usize {
        self.raster.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raster.len() == 0
    }

    /// Number of `true` pixels.
    pub fn count(&self) -> usize {
        self.values().iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Mask {
        Mask::from_raster(self.raster.map(|b| !b))
    }
}

/// Pixelwise conjunction of two equally sized masks.
pub fn mask_and(a: &Mask, b: &Mask) -> Result<Mask> {
    a.raster.check_dims(&b.raster, "mask")?;
    let data = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| x && y)
        .collect();
    Mask::new(a.width(), a.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack(w: usize, h: usize) -> GatedStack {
        GatedStack {
            slices: [
                Raster::filled(w, h, 10.0),
                Raster::filled(w, h, 500.0),
                Raster::filled(w, h, 1023.0),
            ],
            ambient: None,
            delays_ns: [100.0, 200.0, 300.0],
            quantized: true,
        }
    }

    #[test]
    fn valid_stack_passes() {
        validate_stack(&stack(1280, 720)).unwrap();
    }

    #[test]
    fn mismatched_slice_named() {
        let mut s = stack(1280, 720);
        s.slices[1] = Raster::filled(640, 360, 0.0);
        match validate_stack(&s) {
            Err(Error::DimensionMismatch { field, .. }) => assert_eq!(field, "slices[2]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn repeated_delay_rejected() {
        let mut s = stack(4, 4);
        s.delays_ns = [300.0, 300.0, 500.0];
        assert!(matches!(validate_stack(&s), Err(Error::NonMonotoneDelays(_))));
    }

    #[test]
    fn dn_range_only_enforced_when_quantized() {
        let mut s = stack(2, 2);
        s.slices[2] = Raster::filled(2, 2, 1500.0);
        assert!(matches!(
            validate_stack(&s),
            Err(Error::DnOutOfRange { ref field, .. }) if field == "slices[3]"
        ));
        s.quantized = false;
        validate_stack(&s).unwrap();
    }

    #[test]
    fn ambient_dims_checked() {
        let mut s = stack(4, 4);
        s.ambient = Some(Raster::filled(4, 3, 0.0));
        assert!(matches!(
            validate_stack(&s),
            Err(Error::DimensionMismatch { ref field, .. }) if field == "ambient"
        ));
    }

    #[test]
    fn depth_nan_is_canonical() {
        let odd_nan = f32::from_bits(0x7fc0_1234);
        let d = DepthMap::new(2, 1, vec![odd_nan, 3.0]).unwrap();
        assert_eq!(d.values()[0].to_bits(), DepthMap::INVALID.to_bits());
        assert_eq!(d.get(0, 0), None);
        assert_eq!(d.get(1, 0), Some(3.0));
    }

    #[test]
    fn depth_outside_valid_range_rejected() {
        assert!(DepthMap::with_valid_range(1, 1, vec![200.0], (3.0, 150.0)).is_err());
        assert!(DepthMap::new(1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn sparse_invariants() {
        let s = |c, r, range_m| SparseSample {
            col: c,
            row: r,
            range_m,
        };
        assert!(SparseDepth::new(4, 4, vec![s(0, 0, 1.0), s(3, 3, 2.0)]).is_ok());
        assert!(matches!(
            SparseDepth::new(4, 4, vec![s(4, 0, 1.0)]),
            Err(Error::SampleOutOfFrame { .. })
        ));
        assert!(matches!(
            SparseDepth::new(4, 4, vec![s(0, 0, 0.0)]),
            Err(Error::NonPositiveRange { .. })
        ));
        assert!(matches!(
            SparseDepth::new(4, 4, vec![s(1, 1, 1.0), s(1, 1, 2.0)]),
            Err(Error::DuplicateSample { col: 1, row: 1 })
        ));
    }

    #[test]
    fn mask_and_examples() {
        let t = Mask::all(4, 4, true);
        let f = Mask::all(4, 4, false);
        assert_eq!(mask_and(&t, &t).unwrap(), t);
        assert_eq!(mask_and(&t, &f).unwrap(), f);
        let checker = Mask::from_raster(Raster::from_fn(4, 4, |c, r| (c + r) % 2 == 0));
        assert_eq!(mask_and(&checker, &checker.not()).unwrap(), f);
        assert!(mask_and(&t, &Mask::all(4, 3, true)).is_err());
    }

    fn mask_strategy() -> impl Strategy<Value = [Mask; 3]> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), 3 * w * h).prop_map(move |bits| {
                let mk = |k: usize| Mask::new(w, h, bits[k * w * h..(k + 1) * w * h].to_vec()).unwrap();
                [mk(0), mk(1), mk(2)]
            })
        })
    }

    proptest! {
        #[test]
        fn mask_and_algebra([a, b, c] in mask_strategy()) {
            prop_assert_eq!(mask_and(&a, &b).unwrap(), mask_and(&b, &a).unwrap());
            prop_assert_eq!(
                mask_and(&mask_and(&a, &b).unwrap(), &c).unwrap(),
                mask_and(&a, &mask_and(&b, &c).unwrap()).unwrap()
            );
            prop_assert_eq!(mask_and(&a, &a).unwrap(), a);
        }
    }
}
