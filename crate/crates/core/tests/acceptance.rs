//! Acceptance gate: runs every release criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use gated_core::cli::{self, EstimateArgs, NoiseArg, ProfileArgs, SimulateArgs};
use gated_core::domain::SparseSample;
use gated_core::estimate::{estimate_depth, LmOptions};
use gated_core::io::{self, ReadMode};
use gated_core::losses::{multiscale_loss, smoothness_loss, MultiScaleWeights, Target};
use gated_core::metrics::{completeness, depth_metrics, ratio_delta, GroundTruth};
use gated_core::profile::*;
use gated_core::simulate::*;
use gated_core::{AlbedoMap, DepthMap, GatedStack, Mask, ProfileSet, Raster, SparseDepth};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn default_profiles() -> ProfileSet {
    ProfileConfig::default().fit(DEFAULT_DEGREE).unwrap().0
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

const LAYOUTS: [Layout; 4] = [Layout::Plane, Layout::Staircase, Layout::Boxes, Layout::Road];
const SCENE_RANGE: (f64, f64) = (15.0, 75.0);

fn scene_spec(seed: u64, size: usize) -> SceneSpec {
    SceneSpec {
        layout: LAYOUTS[seed as usize % LAYOUTS.len()],
        depth_range: SCENE_RANGE,
        albedo_range: (0.3, 1.0),
        width: size,
        height: size,
        seed,
        steps: 4,
    }
}

fn scenes() -> Vec<(DepthMap, AlbedoMap)> {
    (0..20).map(|s| gen_scene(&scene_spec(s, 256)).unwrap()).collect()
}

// ---------------------------------------------------------------------------------------

fn forward_inverse(scenes: &[(DepthMap, AlbedoMap)], profiles: &ProfileSet) -> Outcome {
    let opts = LmOptions::default();
    let t = Instant::now();
    let results = single_threaded(|| {
        scenes
            .iter()
            .map(|(d, a)| {
                let stack = render_slices(d, a, profiles, RenderOptions::default()).unwrap();
                estimate_depth(&stack, profiles, &opts).unwrap()
            })
            .collect::<Vec<_>>()
    });
    let elapsed = t.elapsed().as_secs_f64();

    let (mut worst_rmse, mut min_d1, mut pixels) = (0.0f64, 100.0f64, 0usize);
    for ((d, _), est) in scenes.iter().zip(&results) {
        let m = depth_metrics(&est.depth, GroundTruth::Dense(d), &est.illuminated, f64::MAX)
            .map_err(|e| e.to_string())?;
        worst_rmse = worst_rmse.max(m.rmse);
        min_d1 = min_d1.min(m.delta1);
        pixels += m.evaluated_points;
    }
    let summary = format!(
        "worst RMSE {worst_rmse:.2e} m, min δ1 {min_d1:.2}% over {pixels} px, {elapsed:.1} s single-threaded"
    );
    ensure(worst_rmse < 0.1, format!("RMSE too high: {summary}"))?;
    ensure(min_d1 == 100.0, format!("δ1 below 100%: {summary}"))?;
    ensure(elapsed < 60.0, format!("too slow: {summary}"))?;
    Ok(summary)
}

/// Profile values tabulated on a fine range grid for the brute-force residual oracle.
struct OracleTable(Vec<[f64; 3]>);

impl OracleTable {
    fn new(profiles: &ProfileSet, step: f64) -> Self {
        let (lo, hi) = profiles.domain();
        let n = ((hi - lo) / step).round() as usize;
        Self(
            (0..=n)
                .map(|k| {
                    let r = (lo + k as f64 * step).min(hi);
                    let p = profiles.profiles();
                    [0, 1, 2].map(|i| p[i].eval(r).unwrap())
                })
                .collect(),
        )
    }

    /// `min_r min_{0 <= alpha <= 2} ||z - alpha c(r)||²`.
    fn min_residual(&self, z: [f64; 3]) -> f64 {
        self.0
            .iter()
            .map(|c| {
                let cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
                let zc = z[0] * c[0] + z[1] * c[1] + z[2] * c[2];
                let alpha = if cc > 0.0 { (zc / cc).clamp(0.0, 2.0) } else { 0.0 };
                (0..3).map(|i| (z[i] - alpha * c[i]).powi(2)).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn noisy_regime(scenes: &[(DepthMap, AlbedoMap)], profiles: &ProfileSet) -> Outcome {
    // every 5th illuminated pixel is checked against the brute-force scan
    const ORACLE_STRIDE: usize = 5;
    let opts = LmOptions::default();
    let oracle = OracleTable::new(profiles, 0.01);
    let (mut abs_sum, mut n_eval, mut min_compl) = (0.0, 0usize, 100.0f64);
    let (mut oracle_ok, mut oracle_n) = (0usize, 0usize);
    for (seed, (d, a)) in scenes.iter().enumerate() {
        let render = RenderOptions { ambient_level: 50.0, ..RenderOptions::default() };
        let clean = render_slices(d, a, profiles, render).unwrap();
        let noisy = add_noise(&clean, &NoiseParams { a: 4.0, b: 25.0, seed: seed as u64 }).unwrap();
        let frame = subtract_ambient(&noisy, true).unwrap();
        let est = estimate_depth(&frame, profiles, &opts).unwrap();

        let m = depth_metrics(&est.depth, GroundTruth::Dense(d), &est.illuminated, 80.0)
            .map_err(|e| e.to_string())?;
        abs_sum += m.mae * m.evaluated_points as f64;
        n_eval += m.evaluated_points;
        min_compl = min_compl.min(completeness(GroundTruth::Dense(d), &est.illuminated, 80.0).unwrap());

        let lit: Vec<usize> = (0..est.illuminated.len()).filter(|&i| est.illuminated.values()[i]).collect();
        for &i in lit.iter().step_by(ORACLE_STRIDE) {
            oracle_n += 1;
            if est.residual.data()[i] <= oracle.min_residual(frame.pixel(i)) + 1e-6 {
                oracle_ok += 1;
            }
        }
    }
    let mae = abs_sum / n_eval as f64;
    let oracle_pct = 100.0 * oracle_ok as f64 / oracle_n as f64;
    let summary = format!(
        "pooled MAE {mae:.3} m, min completeness {min_compl:.1}%, LM ≤ oracle on {oracle_pct:.3}% of {oracle_n} px"
    );
    ensure(mae < 1.0, format!("MAE too high: {summary}"))?;
    ensure(min_compl > 90.0, format!("incomplete: {summary}"))?;
    ensure(oracle_pct >= 99.0, format!("LM worse than oracle: {summary}"))?;
    Ok(summary)
}

fn noise_law() -> Outcome {
    const SIDE: usize = 1000;
    let levels = [100.0, 400.0, 800.0];
    let mut worst = 0.0f64;
    for (k, (a, b)) in [(4.0, 25.0), (1.0, 4.0), (0.5, 1.0)].into_iter().enumerate() {
        let stack = GatedStack::new(
            levels.map(|i| Raster::filled(SIDE, SIDE, i)),
            None,
            [0.0, 1.0, 2.0],
            false,
        )
        .unwrap();
        let noisy = add_noise(&stack, &NoiseParams { a, b, seed: 100 + k as u64 }).unwrap();
        for (slice, &i) in noisy.slices.iter().zip(&levels) {
            let n = slice.len() as f64;
            let mean = slice.data().iter().sum::<f64>() / n;
            let var = slice.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let expect = a * i + b;
            let rel = (var - expect).abs() / expect;
            ensure(rel < 0.05, format!("a={a} b={b} I={i}: variance {var:.2} vs {expect:.2}"))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("9 settings × 10^6 samples, worst relative variance error {:.2}%", 100.0 * worst))
}

fn profile_math() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = range_grid(3.0, 150.0, 0.5);

    // rect/rect against the interval-overlap formula
    let mut worst_overlap = 0.0f64;
    for _ in 0..50 {
        let (tp, tg) = (rng.random_range(5.0..300.0), rng.random_range(5.0..300.0));
        let (delay, amp) = (rng.random_range(0.0..800.0), rng.random_range(0.1..10.0));
        let pulse = PulseModel { shape: Shape::Rect, duration_ns: tp, rise_time_ns: 0.0, amplitude: amp };
        let gate = GateModel { shape: Shape::Rect, delay_ns: delay, duration_ns: tg, rise_time_ns: 0.0 };
        let s = synth_profile(&pulse, &gate, &AttenuationModel::none(), &grid).map_err(|e| e.to_string())?;
        for (&r, &v) in s.ranges.iter().zip(&s.intensities) {
            let tau = 2.0 * r / gated_core::SPEED_OF_LIGHT_M_PER_NS;
            let expect = amp * ((tau + tp).min(delay + tg) - tau.max(delay)).max(0.0);
            let err = (v - expect).abs();
            ensure(err <= 1e-9, format!("rect/rect at {r} m: {v} vs {expect}"))?;
            worst_overlap = worst_overlap.max(err);
        }
    }

    // exact degree-6 reproduction: sample monomial-form polynomials, compare values
    let mut worst_fit = 0.0f64;
    for _ in 0..20 {
        let mono: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let poly = |r: f64| {
            let x = (2.0 * r - 153.0) / 147.0;
            mono.iter().rev().fold(0.0, |acc, c| acc * x + c) + 10.0
        };
        let samples = ProfileSamples::new(grid.clone(), grid.iter().map(|&r| poly(r)).collect()).unwrap();
        let fit = fit_chebyshev(&samples, 6, (3.0, 150.0)).map_err(|e| e.to_string())?;
        let scale = grid.iter().map(|&r| poly(r).abs()).fold(0.0, f64::max);
        for r in range_grid(3.0, 150.0, 0.37) {
            let rel = (fit.profile.eval(r).unwrap() - poly(r)).abs() / scale;
            ensure(rel <= 1e-9, format!("degree-6 fit off by {rel:e} at {r} m"))?;
            worst_fit = worst_fit.max(rel);
        }
    }

    // analytic gradient against central differences
    let mut checked = 0;
    for _ in 0..100 {
        let coeffs: Vec<f64> = (0..7).map(|_| rng.random_range(-100.0..100.0)).collect();
        let p = ChebyshevProfile::new(coeffs, (3.0, 150.0)).unwrap();
        let r = rng.random_range(4.0..149.0);
        let h = 1e-4;
        let fd = (p.eval(r + h).unwrap() - p.eval(r - h).unwrap()) / (2.0 * h);
        let g = eval_profile_gradient(&p, r).unwrap();
        if fd.abs() > 1e-6 {
            ensure((g - fd).abs() <= 1e-5 * fd.abs(), format!("gradient {g} vs FD {fd} at {r} m"))?;
            checked += 1;
        }
    }
    Ok(format!(
        "rect/rect max error {worst_overlap:.1e}, degree-6 max rel {worst_fit:.1e}, gradient ok on {checked}/100"
    ))
}

/// Depth map on quarter-meter values so that offsets and block means stay exact in f32.
fn quarter_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
    let v = (0..w * h).map(|_| rng.random_range(40..320) as f32 * 0.25).collect();
    DepthMap::new(w, h, v).unwrap()
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let weights = MultiScaleWeights::default();
    let lambda_sum: f64 = weights.scale_weights.iter().sum();
    ensure((lambda_sum - 2.4).abs() < 1e-12, "scale weights do not sum to 2.4")?;
    for case in 0..100 {
        // whole 4x4 blocks keep every coarse bin mean exact in f32
        let (w, h) = (4 * rng.random_range(1..7), 4 * rng.random_range(1..7));
        let gt = quarter_map(&mut rng, w, h);

        ensure(multiscale_loss(&gt, Target::Dense(&gt), &weights).unwrap() == 0.0, format!("case {case}: L(gt, gt) != 0"))?;
        let mut bumped = gt.values().to_vec();
        let i = rng.random_range(0..bumped.len());
        bumped[i] += 0.5;
        let bumped = DepthMap::new(w, h, bumped).unwrap();
        ensure(
            multiscale_loss(&bumped, Target::Dense(&gt), &weights).unwrap() > 0.0,
            format!("case {case}: differing bins give zero loss"),
        )?;

        let offset = rng.random_range(1..64) as f32 * 0.125;
        let shifted = DepthMap::new(w, h, gt.values().iter().map(|v| v + offset).collect()).unwrap();
        let l = multiscale_loss(&shifted, Target::Dense(&gt), &weights).unwrap();
        let expect = 2.4 * offset as f64;
        ensure((l - expect).abs() <= 1e-12 * expect, format!("case {case}: offset loss {l} vs {expect}"))?;

        let guide = Raster::from_fn(w, h, |_, _| rng.random_range(0.0..1023.0));
        let c = DepthMap::filled(w, h, rng.random_range(40..320) as f32 * 0.25).unwrap();
        ensure(smoothness_loss(&c, &guide, &weights).unwrap() == 0.0, format!("case {case}: constant map not smooth"))?;
        let s0 = smoothness_loss(&gt, &guide, &weights).unwrap();
        let s1 = smoothness_loss(&shifted, &guide, &weights).unwrap();
        ensure((s0 - s1).abs() <= 1e-12 * s0.max(1.0), format!("case {case}: shift changed smoothness {s0} -> {s1}"))?;
    }
    Ok("100 cases: zero iff equal bins, offset → 2.4·offset, smoothness zero on constants and shift-invariant".into())
}

fn metrics_protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let (p, g) = (rng.random_range(0.1..200.0), rng.random_range(0.1..200.0));
        let d: Vec<bool> = (1..=3).map(|i| ratio_delta(p, g, i).unwrap()).collect();
        ensure(!(d[0] && !d[1]) && !(d[1] && !d[2]), format!("δ not monotone at {p}/{g}"))?;
    }
    let pairs = DepthMap::new(8, 8, (0..64).map(|_| rng.random_range(1.0..100.0)).collect()).unwrap();
    let gt = DepthMap::new(8, 8, (0..64).map(|_| rng.random_range(1.0..80.0)).collect()).unwrap();
    let m = depth_metrics(&pairs, GroundTruth::Dense(&gt), &Mask::all(8, 8, true), 80.0).unwrap();
    ensure(m.delta1 <= m.delta2 && m.delta2 <= m.delta3, "report δ not monotone")?;

    ensure(!ratio_delta(5.0, 4.0, 1).unwrap() && !ratio_delta(4.0, 5.0, 1).unwrap(), "ratio 1.25 counted in δ1")?;
    ensure(ratio_delta(5.0, 4.0, 2).unwrap(), "ratio 1.25 missing from δ2")?;

    let gt: Vec<f32> = (0..100).map(|_| rng.random_range(1..8) as f32 * 10.0).collect();
    let gt = DepthMap::new(10, 10, gt).unwrap();
    let pred = DepthMap::new(10, 10, gt.values().iter().map(|&v| (v as f64 * 1.3) as f32).collect()).unwrap();
    let m = depth_metrics(&pred, GroundTruth::Dense(&gt), &Mask::all(10, 10, true), 80.0).unwrap();
    ensure((m.ard - 0.3).abs() <= 1e-9, format!("ARD {}", m.ard))?;
    ensure(m.delta1 == 0.0 && m.delta2 == 100.0, format!("δ1 {} δ2 {}", m.delta1, m.delta2))?;

    for case in 0..100 {
        let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
        let mut samples = Vec::new();
        for row in 0..h {
            for col in 0..w {
                if rng.random_bool(0.3) {
                    samples.push(SparseSample { col, row, range_m: rng.random_range(1.0..120.0) });
                }
            }
        }
        let mask = Mask::new(w, h, (0..w * h).map(|_| rng.random_bool(0.5)).collect()).unwrap();
        let in_range: Vec<&SparseSample> = samples.iter().filter(|s| s.range_m <= 80.0).collect();
        let hit = in_range.iter().filter(|s| mask.get(s.col, s.row)).count();
        let expect = if in_range.is_empty() { 0.0 } else { 100.0 * hit as f64 / in_range.len() as f64 };
        let sparse = SparseDepth::new(w, h, samples).unwrap();
        let got = completeness(GroundTruth::Sparse(&sparse), &mask, 80.0).unwrap();
        ensure(got == expect, format!("case {case}: completeness {got} vs {expect}"))?;
    }
    Ok(format!("1000 δ pairs monotone, strict 1.25 boundary, 1.3·gt → ARD {:.12}, 100 completeness sets", m.ard))
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = root.join("profile_config.json");
    io::write_json(&config, &ProfileConfig::default()).unwrap();
    let profiles = root.join("profiles.json");
    cli::cmd_profile(&ProfileArgs { config, fit_degree: 6, out: profiles.clone() }).map_err(|e| e.to_string())?;

    // at least 4 workers so the parallel path is exercised even on one core
    let max = std::thread::available_parallelism().map_or(1, |n| n.get()).max(4);
    let mut compared = 0;
    for seed in [1u64, 2, 3] {
        let scene = root.join(format!("scene_{seed}.json"));
        let spec = cli::SceneFile { scene: scene_spec(seed, 96), ambient_level: 50.0, lidar: None };
        io::write_json(&scene, &spec).unwrap();
        let mut outputs = Vec::new();
        for (run, threads) in [(0, 1), (1, 1), (2, max)] {
            let sim = root.join(format!("sim_{seed}_{run}"));
            let est = root.join(format!("est_{seed}_{run}"));
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| -> Result<(), cli::CliError> {
                cli::cmd_simulate(&SimulateArgs {
                    scene: scene.clone(),
                    profiles: profiles.clone(),
                    noise: Some(NoiseArg(NoiseParams { a: 4.0, b: 25.0, seed })),
                    out: sim.clone(),
                })?;
                cli::cmd_estimate(&EstimateArgs {
                    input: sim.clone(),
                    profiles: profiles.clone(),
                    lm_opts: None,
                    out: est.clone(),
                })?;
                Ok(())
            })
            .map_err(|e| e.to_string())?;
            outputs.push((dir_contents(&sim), dir_contents(&est)));
        }
        for (run, other) in outputs.iter().enumerate().skip(1) {
            ensure(other.0 == outputs[0].0, format!("seed {seed}: simulate output differs in run {run}"))?;
            ensure(other.1 == outputs[0].1, format!("seed {seed}: estimate output differs in run {run}"))?;
            compared += other.0.len() + other.1.len();
        }
    }
    Ok(format!("3 seeds × 3 runs (threads 1, 1, {max}): {compared} files bit-identical"))
}

fn bits(values: &[f32]) -> Vec<u32> {
    values.iter().map(|v| v.to_bits()).collect()
}

fn err<T: std::fmt::Debug>(what: &str) -> impl Fn(proptest::test_runner::TestError<T>) -> String + '_ {
    move |e| format!("{what}: {e}")
}

fn io_roundtrips() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut runner = TestRunner::new(Config { cases: 100, failure_persistence: None, ..Config::default() });
    let dims = (1usize..24, 1usize..24);

    runner
        .run(&dims.clone().prop_flat_map(|(w, h)| (Just((w, h)), prop::collection::vec(0u16..=1023, w * h))), |((w, h), v)| {
            let r = Raster::new(w, h, v).unwrap();
            let p = dir.join("slice.png");
            io::write_slice(&p, &r).unwrap();
            prop_assert_eq!(io::read_slice(&p, ReadMode::Strict).unwrap(), r);
            Ok(())
        })
        .map_err(err("slice png"))?;

    runner
        .run(&dims.clone().prop_flat_map(|(w, h)| (Just((w, h)), prop::collection::vec(any::<bool>(), w * h))), |((w, h), v)| {
            let m = Mask::new(w, h, v).unwrap();
            let p = dir.join("mask.png");
            io::write_mask(&p, &m).unwrap();
            prop_assert_eq!(io::read_mask(&p).unwrap(), m);
            Ok(())
        })
        .map_err(err("mask png"))?;

    let depth_value = prop_oneof![1 => Just(f32::NAN), 4 => 0.0f32..500.0];
    runner
        .run(&dims.clone().prop_flat_map(move |(w, h)| (Just((w, h)), prop::collection::vec(depth_value.clone(), w * h))), |((w, h), v)| {
            let d = DepthMap::new(w, h, v).unwrap();
            let p = dir.join("depth.bin");
            io::write_depth(&p, &d).unwrap();
            let back = io::read_depth(&p).unwrap();
            prop_assert_eq!(bits(back.values()), bits(d.values()));
            prop_assert_eq!(back.valid_range(), d.valid_range());
            Ok(())
        })
        .map_err(err("depth raw"))?;

    runner
        .run(&dims.clone().prop_flat_map(|(w, h)| (Just((w, h)), prop::collection::vec(0.0f32..=1.0, w * h))), |((w, h), v)| {
            let a = AlbedoMap::new(w, h, v).unwrap();
            let p = dir.join("albedo.bin");
            io::write_albedo(&p, &a).unwrap();
            prop_assert_eq!(bits(io::read_albedo(&p).unwrap().values()), bits(a.values()));
            Ok(())
        })
        .map_err(err("albedo raw"))?;

    let sparse = dims.clone().prop_flat_map(|(w, h)| {
        (Just((w, h)), prop::collection::btree_map((0..w, 0..h), 1e-3f64..1e3, 0..=(w * h).min(40)))
    });
    runner
        .run(&sparse, |((w, h), points)| {
            let samples = points.into_iter().map(|((col, row), range_m)| SparseSample { col, row, range_m }).collect();
            let s = SparseDepth::new(w, h, samples).unwrap();
            let p = dir.join("sparse.csv");
            io::write_sparse(&p, &s).unwrap();
            prop_assert_eq!(io::read_sparse(&p, w, h).unwrap(), s);
            Ok(())
        })
        .map_err(err("sparse csv"))?;
    let empty = SparseDepth::new(5, 3, Vec::new()).unwrap();
    io::write_sparse(dir.join("empty.csv"), &empty).unwrap();
    ensure(io::read_sparse(dir.join("empty.csv"), 5, 3).unwrap() == empty, "empty sparse set did not round-trip")?;

    runner
        .run(&prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 1..9), 3), |coeffs| {
            let p = coeffs.into_iter().map(|c| ChebyshevProfile::new(c, (3.0, 150.0)).unwrap()).collect::<Vec<_>>();
            let set = ProfileSet::new([p[0].clone(), p[1].clone(), p[2].clone()], [10.0, 20.0, 30.0]).unwrap();
            let path = dir.join("profiles.json");
            io::write_json(&path, &FittedProfiles::from_set(&set, None)).unwrap();
            prop_assert_eq!(io::read_profiles(&path).unwrap(), set);
            Ok(())
        })
        .map_err(err("profiles json"))?;

    runner
        .run(&(1usize..16, 1usize..16, any::<bool>()).prop_flat_map(|(w, h, amb)| {
            (Just((w, h, amb)), prop::collection::vec(0u16..=1023, 4 * w * h))
        }), |((w, h, amb), v)| {
            let plane = |k: usize| Raster::new(w, h, v[k * w * h..(k + 1) * w * h].iter().map(|&x| x as f64).collect()).unwrap();
            let stack = GatedStack::new([plane(0), plane(1), plane(2)], amb.then(|| plane(3)), [1.0, 2.0, 3.0], true).unwrap();
            let d = dir.join(format!("stack_{w}_{h}_{amb}"));
            io::write_stack(&d, &stack).unwrap();
            prop_assert_eq!(io::read_stack(&d, [1.0, 2.0, 3.0], ReadMode::Strict).unwrap(), stack);
            Ok(())
        })
        .map_err(err("stack dir"))?;

    Ok("100 cases each: slice/mask PNG, depth/albedo raw (NaN sentinels), sparse CSV (+empty), profiles JSON, stack dir".into())
}

fn bench_report() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_gated"))
        .args(["bench", "--size", "1280x720", "--repeat", "3"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("bench exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)))?;
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| format!("not JSON: {e}"))?;
    ensure(report["width"] == 1280 && report["height"] == 720 && report["pixels"] == 921_600, "wrong frame size")?;
    ensure(report["repeat"] == 3, "wrong repeat count")?;
    let mut rates = Vec::new();
    for stage in ["render", "noise", "estimate"] {
        let s = &report["stages"][stage];
        let seconds = s["seconds"].as_array().ok_or(format!("{stage}: no seconds"))?;
        ensure(seconds.len() == 3 && seconds.iter().all(|t| t.as_f64().is_some_and(|t| t >= 0.0)), format!("{stage}: bad timings"))?;
        ensure(s["median_seconds"].as_f64().is_some(), format!("{stage}: no median"))?;
        let rate = s["median_pixels_per_second"].as_f64();
        rates.push(format!("{stage} {}", rate.map_or("n/a".into(), |r| format!("{:.2} Mpx/s", r / 1e6))));
    }
    ensure(report["stages"]["estimate"]["median_pixels_per_second"].as_f64().is_some(), "estimate throughput missing")?;
    Ok(format!("{} thread(s): {}", report["threads"], rates.join(", ")))
}

fn main() -> ExitCode {
    let t = Instant::now();
    let profiles = default_profiles();
    let scenes = scenes();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("forward-inverse consistency", Box::new(|| forward_inverse(&scenes, &profiles))),
        ("noisy-regime sanity", Box::new(|| noisy_regime(&scenes, &profiles))),
        ("noise-model variance law", Box::new(noise_law)),
        ("profile math", Box::new(profile_math)),
        ("loss identities", Box::new(loss_identities)),
        ("metrics protocol", Box::new(metrics_protocol)),
        ("determinism", Box::new(determinism)),
        ("I/O round-trips", Box::new(io_roundtrips)),
        ("benchmark reporting", Box::new(bench_report)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check())).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.1} s)", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.1} s)", k + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed in {:.1} s", criteria.len() - failed, criteria.len(), t.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
