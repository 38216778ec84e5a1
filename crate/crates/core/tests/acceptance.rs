//! Acceptance gate: one test per criterion, each ending in a single
//! PASS line. Tolerances are pinned here and nowhere else.
//!
//! Criteria 6 and 7 are training runs (hours of CPU); they are `#[ignore]`d
//! and run explicitly via `cargo test --release -- --ignored`.

use globopt::autodiff::ParamStore;
use globopt::cli::gradcheck_suites;
use globopt::eval::{evaluate_model, spline_baseline};
use globopt::funcgen::{build_case, count_local_minima, DifficultyPreset};
use globopt::model::{param_count, Model, ModelConfig, ModelInputs, StopReason, PUBLISHED_COUNTS};
use globopt::rng::{derive_seed, Namespace, Rng};
use globopt::spline::{bspline_basis, fit_interpolating_spline, GridSpec, KnotVector};
use globopt::trainer::{load_checkpoint, save_checkpoint, train, LossConfig, TrainConfig};

const GRADCHECK_PRIMITIVE_TOL: f64 = 1e-6;
const GRADCHECK_TRAJECTORY_TOL: f64 = 1e-4;
const SPLINE_REPRO_TOL: f64 = 1e-9;
const CALIBRATION_SEED: u64 = 42;
const CALIBRATION_CASES: usize = 500;
const CALIBRATION_BAND: (f64, f64) = (0.26, 0.46);
const MULTIMODAL_MIN_FRACTION: f64 = 0.95;
const TRAINING_ERROR_CEILING: f64 = 0.30;

#[test]
fn criterion_1_gradient_fidelity() {
    let results = gradcheck_suites(GRADCHECK_PRIMITIVE_TOL, GRADCHECK_TRAJECTORY_TOL).unwrap();
    assert!(results.len() >= 12);
    for r in &results {
        assert!(
            r.passed(),
            "suite {} max rel error {} over threshold {}",
            r.name,
            r.max_rel_error,
            r.threshold
        );
    }
    assert!(results.iter().any(|r| r.name == "trajectory_unroll"));
    println!("criterion 1 (gradient fidelity): PASS");
}

#[test]
fn criterion_2_spline_and_oracle_correctness() {
    let mut rng = Rng::new(2024);

    // Partition of unity on random clamped knot vectors.
    for _ in 0..20 {
        let n_interior = 2 + (rng.next_u64() % 8) as usize;
        let mut interior: Vec<f64> = (0..n_interior)
            .map(|_| rng.uniform_in(0.05, 0.95))
            .collect();
        interior.sort_by(|a, b| a.total_cmp(b));
        let kv = KnotVector::clamped(0.0, 1.0, &interior).unwrap();
        for _ in 0..50 {
            let x = rng.uniform_in(0.0, 1.0);
            let sum: f64 = (0..kv.n_basis())
                .map(|i| bspline_basis(i, &kv, x).unwrap())
                .sum();
            assert!((sum - 1.0).abs() < SPLINE_REPRO_TOL, "sum {sum} at x {x}");
        }
    }

    // Interpolation of arbitrary noisy data at the fitted sites.
    let xs: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
    let ys: Vec<f64> = xs.iter().map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    let fit = fit_interpolating_spline(&xs, &ys).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        assert!((fit.eval(*x).unwrap() - y).abs() < SPLINE_REPRO_TOL);
    }

    // Exact reproduction of a cubic polynomial under not-a-knot.
    let poly = |x: f64| 1.0 + 2.0 * x - 3.0 * x * x + 0.5 * x * x * x;
    let ys_poly: Vec<f64> = xs.iter().map(|x| poly(*x)).collect();
    let fit_poly = fit_interpolating_spline(&xs, &ys_poly).unwrap();
    for _ in 0..100 {
        let x = rng.uniform_in(0.0, 1.0);
        assert!((fit_poly.eval(x).unwrap() - poly(x)).abs() < SPLINE_REPRO_TOL);
    }

    // Oracle argmin agrees with a dense independent scan.
    let grid = GridSpec::oracle();
    for seed in [1u64, 2, 3] {
        let case = build_case(&DifficultyPreset::nightmare(), seed, seed + 100).unwrap();
        let oracle = case.x_star;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=400_000u64 {
            let x = i as f64 / 400_000.0;
            let v = case.target.eval(x);
            if v < best.0 {
                best = (v, x);
            }
        }
        // Both lie on or near the same basin bottom; the oracle is pinned to
        // its own grid, so compare at grid resolution.
        assert!(
            (oracle - best.1).abs() <= 1.0 / (grid.n_points() as f64 - 1.0),
            "oracle {oracle} vs dense {}",
            best.1
        );
    }
    println!("criterion 2 (spline and oracle correctness): PASS");
}

#[test]
fn criterion_3_generator_calibration() {
    let preset = DifficultyPreset::nightmare();
    let grid = GridSpec::oracle();
    let mut errors = Vec::with_capacity(CALIBRATION_CASES);
    let mut multimodal = 0usize;
    for i in 0..CALIBRATION_CASES {
        let fseed = derive_seed(CALIBRATION_SEED, Namespace::EvalFunction, i as u64);
        let nseed = derive_seed(CALIBRATION_SEED, Namespace::EvalNoise, i as u64);
        let case = build_case(&preset, fseed, nseed).unwrap();
        errors.push((case.x0 - case.x_star).abs());
        if count_local_minima(&case.target, &grid) >= 3 {
            multimodal += 1;
        }
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let frac = multimodal as f64 / CALIBRATION_CASES as f64;
    assert!(
        mean >= CALIBRATION_BAND.0 && mean <= CALIBRATION_BAND.1,
        "spline-baseline mean error {mean} outside [{}, {}]",
        CALIBRATION_BAND.0,
        CALIBRATION_BAND.1
    );
    assert!(
        frac >= MULTIMODAL_MIN_FRACTION,
        "only {frac} of cases have >= 3 local minima"
    );
    println!(
        "criterion 3 (generator calibration): PASS (mean error {mean:.4}, multimodal {frac:.3})"
    );
}

#[test]
fn criterion_4_architecture_audit() {
    let mut store = ParamStore::new();
    Model::new(ModelConfig::default(), &mut store, 0).unwrap();
    let counts = param_count(&store);
    // Frozen counts of the constructed dimension chain at d=128, d_edv=64,
    // hidden=256 (independently derived layer-by-layer sums).
    assert_eq!(counts.main_encoder, 400_270);
    assert_eq!(counts.iterator, 17_669);
    assert_eq!(counts.updater, 823_880);
    assert_eq!(counts.total, 1_241_819);
    let delta = counts.total as i64 - PUBLISHED_COUNTS.total as i64;
    println!(
        "criterion 4 (architecture audit): PASS (built {} params, published {}, delta {})",
        counts.total, PUBLISHED_COUNTS.total, delta
    );
}

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_edv: 4,
        iter_hidden: 8,
        t_max: 40,
        stop_tau: 1e-5,
        n_samples: 6,
        fixed_unroll: false,
    }
}

fn toy_inputs() -> ModelInputs {
    ModelInputs {
        xs: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        ys: vec![0.4, -0.1, 0.3, -0.6, 0.2, 0.0],
        dys: vec![0.5, -1.0, 0.7, 0.1, -0.4, 1.1],
        cs: vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.2],
        x0: 0.45,
    }
}

fn zero_params(store: &mut ParamStore) {
    for idx in 0..store.len() {
        store.param_mut(idx).data.iter_mut().for_each(|v| *v = 0.0);
    }
}

fn set_param(store: &mut ParamStore, name: &str, f: impl Fn(&mut Vec<f64>)) {
    let idx = store.index_of(name).unwrap_or_else(|| panic!("no param {name}"));
    f(&mut store.param_mut(idx).data);
}

#[test]
fn criterion_5_iteration_semantics() {
    // Constant-step rig: all-zero parameters give s_t = softplus(0) = ln 2
    // every iteration, so the step variance is exactly 0 at t = 2.
    let mut store = ParamStore::new();
    let model = Model::new(tiny_cfg(), &mut store, 1).unwrap();
    zero_params(&mut store);
    let traj = model.run(&store, &toy_inputs()).unwrap();
    assert_eq!(traj.stop_reason, StopReason::Converged);
    assert_eq!(traj.steps.len(), 3);
    assert_eq!(traj.x_final, 0.45); // direction head is zero

    // Oscillating rig: the step head is an affine map through softplus that
    // swaps step sizes 0.1 <-> 0.5, keeping the 3-step variance above tau.
    let mut store = ParamStore::new();
    let model = Model::new(tiny_cfg(), &mut store, 2).unwrap();
    zero_params(&mut store);
    let cfg = tiny_cfg();
    let din = cfg.d_edv + 2;
    set_param(&mut store, "iterator.hidden.w", |w| w[din - 1] = 1.0);
    set_param(&mut store, "iterator.hidden.log_alpha", |v| v[0] = 0.0);
    set_param(&mut store, "iterator.hidden.log_beta", |v| v[0] = -50.0);
    set_param(&mut store, "iterator.hidden.log_gamma", |v| v[0] = -50.0);
    set_param(&mut store, "iterator.step.w", |w| {
        w[0] = -4.548_401_976_845_34;
    });
    set_param(&mut store, "iterator.step.b", |b| {
        b[0] = 0.022_029_275_058_909;
    });
    let traj = model.run(&store, &toy_inputs()).unwrap();
    assert_eq!(traj.stop_reason, StopReason::MaxIters);
    assert_eq!(traj.steps.len(), 40);
    let tail: Vec<f64> = traj.steps[30..].iter().map(|s| s.s).collect();
    for pair in tail.windows(2) {
        assert!((pair[0] - pair[1]).abs() > 0.1, "steps stopped oscillating");
    }

    // Range fuzz over 1000 random models and inputs.
    let mut rng = Rng::new(5_000);
    for trial in 0..1000u64 {
        let mut store = ParamStore::new();
        let model = Model::new(tiny_cfg(), &mut store, 10_000 + trial).unwrap();
        let n = 6;
        let inputs = ModelInputs {
            xs: (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
            ys: (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect(),
            dys: (0..n).map(|_| rng.uniform_in(-5.0, 5.0)).collect(),
            cs: (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect(),
            x0: rng.uniform_in(0.0, 1.0),
        };
        let traj = model.run(&store, &inputs).unwrap();
        assert!(!traj.steps.is_empty() && traj.steps.len() <= 40);
        for step in &traj.steps {
            assert!((0.0..=1.0).contains(&step.x), "x {} out of range", step.x);
            assert!(step.s > 0.0, "step {} not positive", step.s);
            assert!(step.d.abs() <= 1.0, "direction {} out of range", step.d);
        }
    }
    println!("criterion 5 (iteration semantics): PASS");
}

/// Desk-scale training gate. Hours of CPU; run with
/// `cargo test --release --test acceptance -- --ignored criterion_6`.
#[test]
#[ignore]
fn criterion_6_desk_scale_training() {
    let mcfg = ModelConfig {
        d_model: 16,
        d_edv: 8,
        iter_hidden: 16,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        epochs: 10_000,
        batch_size: 16,
        learning_rate: 2e-4,
        preset: DifficultyPreset::nightmare(),
        seed: 6,
        checkpoint_every: 2_000,
        log_every: 50,
        grad_clip: Some(5.0),
    };
    let dir = std::env::temp_dir().join("globopt_criterion6");
    let outcome = train(&tcfg, &LossConfig::default(), &mcfg, &dir).unwrap();

    let (model, store) = globopt::trainer::model_from_checkpoint(&outcome.checkpoint).unwrap();
    let report = evaluate_model(&model, &store, &tcfg.preset, 200, 77).unwrap();
    let baseline = spline_baseline(&tcfg.preset, 200, 77).unwrap();
    assert!(
        report.model.mean <= TRAINING_ERROR_CEILING,
        "held-out mean error {} above {TRAINING_ERROR_CEILING}",
        report.model.mean
    );
    assert!(
        report.model.mean < baseline.stats.mean,
        "model mean {} not below spline mean {}",
        report.model.mean,
        baseline.stats.mean
    );
    println!(
        "criterion 6 (desk-scale training): PASS (model {:.4}, spline {:.4})",
        report.model.mean, baseline.stats.mean
    );
}

/// Optional full-scale reproduction; weeks of CPU at this scale and
/// explicitly not a desk-scale gate.
#[test]
#[ignore]
fn criterion_7_full_scale_reproduction() {
    let mcfg = ModelConfig::default();
    let tcfg = TrainConfig {
        epochs: 300_000,
        batch_size: 16,
        learning_rate: 2e-4,
        preset: DifficultyPreset::nightmare(),
        seed: 7,
        checkpoint_every: 10_000,
        log_every: 100,
        grad_clip: Some(5.0),
    };
    let dir = std::env::temp_dir().join("globopt_criterion7");
    let outcome = train(&tcfg, &LossConfig::default(), &mcfg, &dir).unwrap();

    let (model, store) = globopt::trainer::model_from_checkpoint(&outcome.checkpoint).unwrap();
    let report = evaluate_model(&model, &store, &tcfg.preset, 50, 777).unwrap();
    let baseline = spline_baseline(&tcfg.preset, 50, 777).unwrap();
    assert!(
        (report.model.mean - 0.0805).abs() <= 0.03,
        "mean error {} outside 0.0805 +- 0.03",
        report.model.mean
    );
    assert!(report.success_at_010 >= 0.60);
    assert!(baseline.stats.mean - report.model.mean >= 0.20);
    println!(
        "criterion 7 (full-scale reproduction): PASS (model {:.4})",
        report.model.mean
    );
}

#[test]
fn criterion_8_determinism_and_roundtrip() {
    let mcfg = ModelConfig {
        d_model: 8,
        d_edv: 4,
        iter_hidden: 8,
        t_max: 6,
        stop_tau: 1e-5,
        n_samples: 8,
        fixed_unroll: false,
    };
    let tcfg = TrainConfig {
        epochs: 3,
        batch_size: 2,
        learning_rate: 2e-4,
        preset: DifficultyPreset::nightmare().with_samples(8),
        seed: 88,
        checkpoint_every: 10,
        log_every: 1,
        grad_clip: None,
    };
    let run_once = |tag: &str| {
        let dir = std::env::temp_dir().join(format!("globopt_criterion8_{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        let out = train(&tcfg, &LossConfig::default(), &mcfg, &dir).unwrap();
        let ckpt = std::fs::read(&out.checkpoint).unwrap();
        (out, ckpt)
    };
    let (out_a, ckpt_a) = run_once("a");
    let (out_b, ckpt_b) = run_once("b");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between seeded runs");
    for (a, b) in out_a.records.iter().zip(&out_b.records) {
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.mean_error.to_bits(), b.mean_error.to_bits());
    }

    // Checkpoint round-trip reproduces the trajectory bit-exactly.
    let case = build_case(&tcfg.preset, 808, 809).unwrap();
    let inputs = ModelInputs::from_case(&case).unwrap();
    let mut store = ParamStore::new();
    let model = Model::new(mcfg.clone(), &mut store, 4).unwrap();
    let before = model.run(&store, &inputs).unwrap();
    let path = std::env::temp_dir().join("globopt_criterion8_roundtrip.bin");
    save_checkpoint(&store, &mcfg, &path).unwrap();
    let (loaded_values, loaded_cfg) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded_cfg, mcfg);
    let mut fresh = ParamStore::new();
    let model2 = Model::new(loaded_cfg, &mut fresh, 999).unwrap();
    fresh.load_values_from(&loaded_values).unwrap();
    let after = model2.run(&fresh, &inputs).unwrap();
    assert_eq!(before, after);
    println!("criterion 8 (determinism and round-trip): PASS");
}
