//! Range-intensity profiles.
//!
//! A profile `C(r)` is the intensity a unit-albedo reflector at range `r` produces in one
//! gated slice: the overlap of the gate `g(t - delay)` with the returned pulse
//! `p(t - 2r/c)`, scaled by the distance attenuation `beta(r)`. Profiles are sampled on a
//! range grid and approximated by a low-degree Chebyshev series for continuous
//! evaluation and differentiation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{NUM_SLICES, SPEED_OF_LIGHT_M_PER_NS};

/// Degree of the Chebyshev approximation used throughout.
pub const DEFAULT_DEGREE: usize = 6;

/// Default approximation domain in meters.
pub const DEFAULT_DOMAIN: (f64, f64) = (3.0, 150.0);

/// Largest range accepted on a synthesis grid.
pub const MAX_GRID_RANGE_M: f64 = 300.0;

/// Absolute tolerance of the adaptive overlap quadrature.
pub const QUADRATURE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rect,
    Trapezoid,
}

/// Laser pulse `p(t)`, supported on `[0, duration]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseModel {
    pub shape: Shape,
    pub duration_ns: f64,
    #[serde(default)]
    pub rise_time_ns: f64,
    pub amplitude: f64,
}

/// Sensor gate `g(t - delay)`, unit gain, supported on `[delay, delay + duration]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub shape: Shape,
    pub delay_ns: f64,
    pub duration_ns: f64,
    #[serde(default)]
    pub rise_time_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttenuationMode {
    None,
    InverseSquare,
    InverseSquareExtinction,
}

/// Distance attenuation `beta(r)`, normalized so that `beta(reference_range) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationModel {
    pub mode: AttenuationMode,
    #[serde(default)]
    pub sigma_per_m: f64,
    pub reference_range_m: f64,
}

fn check_waveform(field: &str, shape: Shape, duration: f64, rise: f64) -> Result<()> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::invalid(
            format!("{field}.duration_ns"),
            "must be positive",
        ));
    }
    let rise_ok = match shape {
        Shape::Rect => rise == 0.0,
        Shape::Trapezoid => rise >= 0.0 && rise < duration / 2.0,
    };
    if !rise_ok {
        return Err(Error::invalid(
            format!("{field}.rise_time_ns"),
            format!("{rise} not allowed for {shape:?} of duration {duration}"),
        ));
    }
    Ok(())
}

/// Piecewise-linear waveform as `(t0, t1, v0, v1)` segments in absolute time.
fn segments(shape: Shape, start: f64, duration: f64, rise: f64, peak: f64) -> Vec<[f64; 4]> {
    let end = start + duration;
    match shape {
        Shape::Rect => vec![[start, end, peak, peak]],
        Shape::Trapezoid if rise == 0.0 => vec![[start, end, peak, peak]],
        Shape::Trapezoid => vec![
            [start, start + rise, 0.0, peak],
            [start + rise, end - rise, peak, peak],
            [end - rise, end, peak, 0.0],
        ],
    }
}

/// Linear segment containing `t`, evaluated (and extrapolated) at `x`.
fn segment_value(segs: &[[f64; 4]], t: f64, x: f64) -> f64 {
    for &[t0, t1, v0, v1] in segs {
        if t >= t0 && t <= t1 {
            if t1 == t0 {
                return v0;
            }
            return v0 + (v1 - v0) * (x - t0) / (t1 - t0);
        }
    }
    0.0
}

impl PulseModel {
    pub fn validate(&self) -> Result<()> {
        check_waveform("pulse", self.shape, self.duration_ns, self.rise_time_ns)?;
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid("pulse.amplitude", "must be positive"));
        }
        Ok(())
    }

    fn segments_at(&self, start: f64) -> Vec<[f64; 4]> {
        segments(
            self.shape,
            start,
            self.duration_ns,
            self.rise_time_ns,
            self.amplitude,
        )
    }
}

impl GateModel {
    pub fn validate(&self) -> Result<()> {
        check_waveform("gate", self.shape, self.duration_ns, self.rise_time_ns)?;
        if !(self.delay_ns >= 0.0 && self.delay_ns.is_finite()) {
            return Err(Error::invalid("gate.delay_ns", "must be non-negative"));
        }
        Ok(())
    }

    fn segments(&self) -> Vec<[f64; 4]> {
        segments(
            self.shape,
            self.delay_ns,
            self.duration_ns,
            self.rise_time_ns,
            1.0,
        )
    }
}

impl AttenuationModel {
    pub fn none() -> Self {
        Self {
            mode: AttenuationMode::None,
            sigma_per_m: 0.0,
            reference_range_m: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_per_m >= 0.0 && self.sigma_per_m.is_finite()) {
            return Err(Error::invalid("attenuation.sigma_per_m", "must be >= 0"));
        }
        if !(self.reference_range_m > 0.0 && self.reference_range_m.is_finite()) {
            return Err(Error::invalid(
                "attenuation.reference_range_m",
                "must be positive",
            ));
        }
        Ok(())
    }

    /// `beta(r)`. Inverse-square modes are undefined at `r = 0` and return infinity there.
    pub fn factor(&self, range_m: f64) -> f64 {
        let r0 = self.reference_range_m;
        match self.mode {
            AttenuationMode::None => 1.0,
            AttenuationMode::InverseSquare => (r0 / range_m).powi(2),
            AttenuationMode::InverseSquareExtinction => {
                (r0 / range_m).powi(2) * (-2.0 * self.sigma_per_m * (range_m - r0)).exp()
            }
        }
    }
}

/// Round-trip time in ns for a reflector at `range_m`.
#[inline]
pub fn round_trip_ns(range_m: f64) -> f64 {
    2.0 * range_m / SPEED_OF_LIGHT_M_PER_NS
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫ g(t - delay) p(t - tau) dt` for a pulse launched at `tau` ns, without attenuation.
pub fn gate_pulse_overlap(pulse: &PulseModel, gate: &GateModel, tau_ns: f64) -> f64 {
    let lo = gate.delay_ns.max(tau_ns);
    let hi = (gate.delay_ns + gate.duration_ns).min(tau_ns + pulse.duration_ns);
    if hi <= lo {
        return 0.0;
    }
    if pulse.shape == Shape::Rect && gate.shape == Shape::Rect {
        return pulse.amplitude * (hi - lo);
    }

    let gs = gate.segments();
    let ps = pulse.segments_at(tau_ns);
    let mut cuts: Vec<f64> = gs
        .iter()
        .chain(ps.iter())
        .flat_map(|s| [s[0], s[1]])
        .filter(|&t| t > lo && t < hi)
        .collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let pieces = (cuts.len() - 1) as f64;
    cuts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            // both waveforms are linear inside a piece; evaluate the piece's own segment
            // so jump discontinuities at the endpoints do not leak in
            let f = |t: f64| segment_value(&gs, mid, t) * segment_value(&ps, mid, t);
            integrate(f, a, b, QUADRATURE_TOLERANCE / pieces)
        })
        .sum()
}

/// Discrete profile measurements `C(r)` on an ascending range grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSamples {
    pub ranges: Vec<f64>,
    pub intensities: Vec<f64>,
}

impl ProfileSamples {
    pub fn new(ranges: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        validate_grid(&ranges)?;
        if ranges.len() != intensities.len() {
            return Err(Error::invalid(
                "intensities",
                format!("{} values for {} ranges", intensities.len(), ranges.len()),
            ));
        }
        if intensities.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("intensities", "must be finite and >= 0"));
        }
        Ok(Self {
            ranges,
            intensities,
        })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    for (i, w) in grid.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonAscendingGrid { index: i + 1 });
        }
    }
    Ok(())
}

/// Evenly spaced grid from `start` to `stop` inclusive (when `stop` lands on a step).
pub fn range_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return Vec::new();
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

pub fn synth_profile(
    pulse: &PulseModel,
    gate: &GateModel,
    atten: &AttenuationModel,
    range_grid: &[f64],
) -> Result<ProfileSamples> {
    validate_grid(range_grid)?;
    pulse.validate()?;
    gate.validate()?;
    atten.validate()?;
    let (first, last) = (range_grid[0], range_grid[range_grid.len() - 1]);
    if first < 0.0 || last > MAX_GRID_RANGE_M {
        return Err(Error::invalid(
            "range_grid",
            format!("[{first}, {last}] m exceeds [0, {MAX_GRID_RANGE_M}] m"),
        ));
    }

    let intensities = range_grid
        .iter()
        .map(|&r| {
            let overlap = gate_pulse_overlap(pulse, gate, round_trip_ns(r));
            if overlap == 0.0 {
                return Ok(0.0);
            }
            let beta = atten.factor(r);
            if !beta.is_finite() {
                return Err(Error::invalid(
                    "range_grid",
                    format!("attenuation undefined at r = {r} m"),
                ));
            }
            Ok(beta * overlap)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProfileSamples {
        ranges: range_grid.to_vec(),
        intensities,
    })
}

/// Chebyshev series `sum_k c_k T_k(x)` with `x` the affine image of `r` on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevProfile {
    coefficients: Vec<f64>,
    domain: (f64, f64),
}

impl ChebyshevProfile {
    pub fn new(coefficients: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::invalid("coefficients", "need at least one"));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("coefficients", "must be finite"));
        }
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(
                "domain",
                format!("[{lo}, {hi}] is not a proper interval"),
            ));
        }
        Ok(Self {
            coefficients,
            domain,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn contains(&self, range_m: f64) -> bool {
        range_m >= self.domain.0 && range_m <= self.domain.1
    }

    fn to_unit(&self, range_m: f64) -> f64 {
        let (a, b) = self.domain;
        (2.0 * range_m - (a + b)) / (b - a)
    }

    fn check(&self, range_m: f64) -> Result<()> {
        if self.contains(range_m) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                range: range_m,
                domain: self.domain,
            })
        }
    }

    /// Clenshaw evaluation without a domain check.
    pub fn value_unchecked(&self, range_m: f64) -> f64 {
        clenshaw(&self.coefficients, self.to_unit(range_m))
    }

    /// Value and derivative with respect to range, without a domain check.
    pub fn value_and_slope_unchecked(&self, range_m: f64) -> (f64, f64) {
        let x = self.to_unit(range_m);
        let value = clenshaw(&self.coefficients, x);
        let (a, b) = self.domain;
        let slope = clenshaw_derivative(&self.coefficients, x) * 2.0 / (b - a);
        (value, slope)
    }

    pub fn eval(&self, range_m: f64) -> Result<f64> {
        self.check(range_m)?;
        Ok(self.value_unchecked(range_m))
    }

    /// Evaluates at the nearest domain endpoint when `range_m` falls outside.
    pub fn eval_clamped(&self, range_m: f64) -> f64 {
        self.value_unchecked(range_m.clamp(self.domain.0, self.domain.1))
    }

    pub fn gradient(&self, range_m: f64) -> Result<f64> {
        self.check(range_m)?;
        Ok(self.value_and_slope_unchecked(range_m).1)
    }
}

fn clenshaw(c: &[f64], x: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = ck + 2.0 * x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    c[0] + x * b1 - b2
}

/// d/dx of the series, via the derivative-coefficient recurrence
/// `c'_{k-1} = c'_{k+1} + 2k c_k`.
fn clenshaw_derivative(c: &[f64], x: f64) -> f64 {
    let n = c.len();
    if n < 2 {
        return 0.0;
    }
    let mut d = vec![0.0; n + 1];
    for k in (1..n).rev() {
        d[k - 1] = d[k + 1] + 2.0 * k as f64 * c[k];
    }
    d[0] *= 0.5;
    clenshaw(&d[..n - 1], x)
}

/// `eval_profile` with an optional clamp to the domain.
pub fn eval_profile(profile: &ChebyshevProfile, range_m: f64, clamp: bool) -> Result<f64> {
    if clamp {
        Ok(profile.eval_clamped(range_m))
    } else {
        profile.eval(range_m)
    }
}

pub fn eval_profile_gradient(profile: &ChebyshevProfile, range_m: f64) -> Result<f64> {
    profile.gradient(range_m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevFit {
    pub profile: ChebyshevProfile,
    /// RMS of `C(r) - C~(r)` over the samples.
    pub rms_residual: f64,
}

/// Least-squares fit in the Chebyshev basis, solved by Householder QR.
pub fn fit_chebyshev(
    samples: &ProfileSamples,
    degree: usize,
    domain: (f64, f64),
) -> Result<ChebyshevFit> {
    let cols = degree + 1;
    if samples.len() < cols {
        return Err(Error::InsufficientSamples {
            degree,
            needed: cols,
            found: samples.len(),
        });
    }
    // placeholder coefficients only to validate the domain and map ranges
    let shell = ChebyshevProfile::new(vec![0.0], domain)?;
    if let Some(&r) = samples.ranges.iter().find(|&&r| !shell.contains(r)) {
        return Err(Error::SamplesOutsideDomain { range: r, domain });
    }

    let rows = samples.len();
    let mut a = vec![0.0; rows * cols];
    for (i, &r) in samples.ranges.iter().enumerate() {
        let x = shell.to_unit(r);
        let row = &mut a[i * cols..(i + 1) * cols];
        row[0] = 1.0;
        if cols > 1 {
            row[1] = x;
        }
        for k in 2..cols {
            row[k] = 2.0 * x * row[k - 1] - row[k - 2];
        }
    }
    let coefficients = householder_least_squares(&mut a, rows, cols, &samples.intensities)
        .ok_or_else(|| Error::invalid("samples", "rank-deficient Chebyshev design matrix"))?;
    let profile = ChebyshevProfile::new(coefficients, domain)?;

    let sse: f64 = samples
        .ranges
        .iter()
        .zip(&samples.intensities)
        .map(|(&r, &c)| (profile.value_unchecked(r) - c).powi(2))
        .sum();
    Ok(ChebyshevFit {
        profile,
        rms_residual: (sse / rows as f64).sqrt(),
    })
}

/// Solves `min ||A x - y||` for a row-major `rows x cols` matrix, overwriting `a`.
fn householder_least_squares(a: &mut [f64], rows: usize, cols: usize, y: &[f64]) -> Option<Vec<f64>> {
    let mut rhs = y.to_vec();
    for k in 0..cols {
        let norm = (k..rows).map(|i| a[i * cols + k].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[k * cols + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..rows).map(|i| a[i * cols + k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..cols {
            let dot: f64 = (k..rows).map(|i| v[i - k] * a[i * cols + j]).sum();
            let s = 2.0 * dot / vnorm2;
            for i in k..rows {
                a[i * cols + j] -= s * v[i - k];
            }
        }
        let dot: f64 = (k..rows).map(|i| v[i - k] * rhs[i]).sum();
        let s = 2.0 * dot / vnorm2;
        for i in k..rows {
            rhs[i] -= s * v[i - k];
        }
    }
    let scale = (0..cols).map(|k| a[k * cols + k].abs()).fold(0.0, f64::max);
    let mut x = vec![0.0; cols];
    for k in (0..cols).rev() {
        let diag = a[k * cols + k];
        if diag.abs() <= scale * 1e-14 {
            return None;
        }
        let tail: f64 = (k + 1..cols).map(|j| a[k * cols + j] * x[j]).sum();
        x[k] = (rhs[k] - tail) / diag;
    }
    Some(x)
}

/// Per-slice forward models used to synthesize one profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub pulse: PulseModel,
    pub gate: GateModel,
    pub attenuation: AttenuationModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start_m: f64,
    pub stop_m: f64,
    pub step_m: f64,
}

impl GridSpec {
    pub fn ranges(&self) -> Vec<f64> {
        range_grid(self.start_m, self.stop_m, self.step_m)
    }
}

/// Profile configuration file: forward models for the three slices plus the sampling
/// grid and approximation domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub slices: [SliceConfig; NUM_SLICES],
    pub grid: GridSpec,
    pub domain: (f64, f64),
}

impl Default for ProfileConfig {
    /// Stand-in exposure design: a 78 ns trapezoidal pulse against three trapezoidal
    /// gates of increasing delay and width, with inverse-square falloff. Per-slice pulse
    /// amplitudes put the brightest response over 15-75 m at roughly 900 DN. Not a
    /// hardware calibration.
    ///
    /// The gates are sharp for a degree-6 series over 3-150 m, so the fitted curves
    /// overshoot their synthesized samples and dip below zero between peaks (about -130 DN
    /// at worst inside 10-100 m). Rendering and estimation both use the fitted curves, so
    /// the model stays self-consistent, and the steeper flanks give clearly better range
    /// precision under noise. `configs/smooth_profiles.json` is a smoother design whose
    /// fit tracks the synthesized profiles to about 2% of peak, at roughly 1.6x the noisy
    /// range error.
    fn default() -> Self {
        let attenuation = AttenuationModel {
            mode: AttenuationMode::InverseSquare,
            sigma_per_m: 0.0,
            reference_range_m: 30.0,
        };
        let slice = |amplitude, delay_ns, duration_ns, rise_time_ns| SliceConfig {
            pulse: PulseModel {
                shape: Shape::Trapezoid,
                duration_ns: 78.0,
                rise_time_ns: 32.0,
                amplitude,
            },
            gate: GateModel {
                shape: Shape::Trapezoid,
                delay_ns,
                duration_ns,
                rise_time_ns,
            },
            attenuation,
        };
        Self {
            slices: [
                slice(14.44, 128.0, 190.0, 45.0),
                slice(52.65, 200.0, 290.0, 125.0),
                slice(130.66, 365.0, 340.0, 120.0),
            ],
            grid: GridSpec {
                start_m: DEFAULT_DOMAIN.0,
                stop_m: DEFAULT_DOMAIN.1,
                step_m: 0.5,
            },
            domain: DEFAULT_DOMAIN,
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<()> {
        for s in &self.slices {
            s.pulse.validate()?;
            s.gate.validate()?;
            s.attenuation.validate()?;
        }
        let d = [
            self.slices[0].gate.delay_ns,
            self.slices[1].gate.delay_ns,
            self.slices[2].gate.delay_ns,
        ];
        if !(d[0] < d[1] && d[1] < d[2]) {
            return Err(Error::NonMonotoneDelays(d));
        }
        Ok(())
    }

    pub fn delays_ns(&self) -> [f64; NUM_SLICES] {
        self.slices.map(|s| s.gate.delay_ns)
    }

    pub fn synthesize(&self) -> Result<[ProfileSamples; NUM_SLICES]> {
        self.validate()?;
        let grid = self.grid.ranges();
        let [a, b, c] = &self.slices;
        Ok([
            synth_profile(&a.pulse, &a.gate, &a.attenuation, &grid)?,
            synth_profile(&b.pulse, &b.gate, &b.attenuation, &grid)?,
            synth_profile(&c.pulse, &c.gate, &c.attenuation, &grid)?,
        ])
    }

    /// Synthesizes all three profiles and fits each at `degree`.
    pub fn fit(&self, degree: usize) -> Result<(ProfileSet, [f64; NUM_SLICES])> {
        let samples = self.synthesize()?;
        let mut fits = Vec::with_capacity(NUM_SLICES);
        for s in &samples {
            fits.push(fit_chebyshev(s, degree, self.domain)?);
        }
        let residuals = [fits[0].rms_residual, fits[1].rms_residual, fits[2].rms_residual];
        let profiles = [
            fits[0].profile.clone(),
            fits[1].profile.clone(),
            fits[2].profile.clone(),
        ];
        Ok((ProfileSet::new(profiles, self.delays_ns())?, residuals))
    }
}

/// The three calibrated slice profiles of a camera, sharing one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    profiles: [ChebyshevProfile; NUM_SLICES],
    delays_ns: [f64; NUM_SLICES],
}

impl ProfileSet {
    pub fn new(profiles: [ChebyshevProfile; NUM_SLICES], delays_ns: [f64; NUM_SLICES]) -> Result<Self> {
        let domain = profiles[0].domain();
        if profiles.iter().any(|p| p.domain() != domain) {
            return Err(Error::ProfileDomainMismatch);
        }
        if !(delays_ns[0] < delays_ns[1] && delays_ns[1] < delays_ns[2]) {
            return Err(Error::NonMonotoneDelays(delays_ns));
        }
        Ok(Self {
            profiles,
            delays_ns,
        })
    }

    pub fn profiles(&self) -> &[ChebyshevProfile; NUM_SLICES] {
        &self.profiles
    }

    pub fn delays_ns(&self) -> [f64; NUM_SLICES] {
        self.delays_ns
    }

    pub fn domain(&self) -> (f64, f64) {
        self.profiles[0].domain()
    }

    /// `C~(r)` for all slices, no domain check.
    #[inline]
    pub fn values_unchecked(&self, range_m: f64) -> [f64; NUM_SLICES] {
        [
            self.profiles[0].value_unchecked(range_m),
            self.profiles[1].value_unchecked(range_m),
            self.profiles[2].value_unchecked(range_m),
        ]
    }

    /// `C~(r)` and `dC~/dr` for all slices, no domain check.
    #[inline]
    pub fn values_and_slopes_unchecked(&self, range_m: f64) -> ([f64; NUM_SLICES], [f64; NUM_SLICES]) {
        let [a, b, c] = [
            self.profiles[0].value_and_slope_unchecked(range_m),
            self.profiles[1].value_and_slope_unchecked(range_m),
            self.profiles[2].value_and_slope_unchecked(range_m),
        ];
        ([a.0, b.0, c.0], [a.1, b.1, c.1])
    }
}

/// One entry of the fitted-profiles JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedProfileRecord {
    pub slice: usize,
    pub delay_ns: f64,
    pub domain: (f64, f64),
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_residual: Option<f64>,
}

/// Fitted-profiles JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedProfiles {
    pub version: u32,
    pub profiles: Vec<FittedProfileRecord>,
}

impl FittedProfiles {
    pub fn from_set(set: &ProfileSet, residuals: Option<[f64; NUM_SLICES]>) -> Self {
        let profiles = set
            .profiles()
            .iter()
            .enumerate()
            .map(|(i, p)| FittedProfileRecord {
                slice: i + 1,
                delay_ns: set.delays_ns()[i],
                domain: p.domain(),
                coefficients: p.coefficients().to_vec(),
                fit_residual: residuals.map(|r| r[i]),
            })
            .collect();
        Self {
            version: 1,
            profiles,
        }
    }

    pub fn to_set(&self) -> Result<ProfileSet> {
        if self.profiles.len() != NUM_SLICES {
            return Err(Error::invalid(
                "profiles",
                format!("expected {NUM_SLICES} entries, found {}", self.profiles.len()),
            ));
        }
        let mut ordered = self.profiles.clone();
        ordered.sort_by_key(|p| p.slice);
        if ordered.iter().enumerate().any(|(i, p)| p.slice != i + 1) {
            return Err(Error::invalid("profiles.slice", "must be exactly 1, 2, 3"));
        }
        let mk = |p: &FittedProfileRecord| ChebyshevProfile::new(p.coefficients.clone(), p.domain);
        ProfileSet::new(
            [mk(&ordered[0])?, mk(&ordered[1])?, mk(&ordered[2])?],
            [ordered[0].delay_ns, ordered[1].delay_ns, ordered[2].delay_ns],
        )
    }
}
