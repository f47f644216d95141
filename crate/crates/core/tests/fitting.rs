use divkernel::fit::{fit, generate_dataset, kl_gradient, sub_seed, Dataset, FitConfig, FitHistory, DATA_STREAM};
use divkernel::model::{get_model, ModelInstance, ModelParams};
use divkernel::par::{with_workers, Execution};
use divkernel::score::AlphaSchedule;
use divkernel::simulate::{simulate_ensemble, PathConfig};
use divkernel::DivergenceKernel;

// one-dimensional prototype settings shared with the acceptance suite
const T1: f64 = 2.0;
const DT1: f64 = 0.01;
const ALPHA1: f64 = 10.0;

fn proto1d(gamma: Vec<f64>) -> ModelInstance {
    get_model("diffproto1d", ModelParams::new(gamma, 1)).unwrap()
}

fn steps(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

fn data(m: &ModelInstance, n: usize, dt: f64, t: f64, seed: u64) -> Dataset {
    generate_dataset(m, n, dt, steps(t, dt), sub_seed(seed, DATA_STREAM), Execution::Parallel).unwrap()
}

fn gradient_at(m: &ModelInstance, d: &Dataset, paths: usize, seed: u64, dirs: Vec<Vec<f64>>) -> (Vec<f64>, Vec<f64>) {
    let hook = DivergenceKernel::continuous(AlphaSchedule::constant(ALPHA1).unwrap());
    let ens = simulate_ensemble(&PathConfig::new(m, DT1, steps(T1, DT1), paths, seed).with_directions(dirs), &hook).unwrap();
    let g = kl_gradient(d, &ens, 5, Execution::Parallel).unwrap();
    (g.grad, g.se)
}

fn config(m: ModelInstance, truth: Vec<f64>, updates: usize, seed: u64) -> FitConfig {
    FitConfig {
        model: m,
        dt: DT1,
        n_steps: steps(T1, DT1),
        alpha: AlphaSchedule::constant(ALPHA1).unwrap(),
        n_paths: 200,
        n_neighbors: 5,
        eta: 1.0,
        n_updates: updates,
        seed,
        gamma_true: Some(truth),
        execution: Execution::Parallel,
    }
}

#[test]
fn gradient_vanishes_at_the_truth() {
    let truth = proto1d(vec![0.0, 0.0]);
    let d = data(&truth, 2_000, DT1, T1, 301);
    let (g, se) = gradient_at(&truth, &d, 20_000, 302, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    for (i, (v, s)) in g.iter().zip(&se).enumerate() {
        assert!(v.abs() < 3.0 * s, "component {i}: {v} ± {s}");
    }
}

#[test]
fn first_step_points_toward_the_truth() {
    let start = proto1d(vec![5.0, 1.0]);
    let offset = [5.0, 1.0];
    let mut descending = 0;
    for s in 0..5 {
        let d = data(&proto1d(vec![0.0, 0.0]), 200, DT1, T1, 310 + s);
        let (g, _) = gradient_at(&start, &d, 200, 320 + s, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        // the step −g must have a negative inner product with γ_0 − γ_true
        descending += usize::from(g[0] * offset[0] + g[1] * offset[1] > 0.0);
    }
    assert!(descending >= 4, "{descending} of 5 seeds descend");
}

#[test]
fn gradient_is_linear_in_the_direction() {
    let m = proto1d(vec![1.0, 0.5]);
    let d = data(&proto1d(vec![0.0, 0.0]), 200, DT1, T1, 330);
    let (g, _) = gradient_at(&m, &d, 300, 331, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, -2.0]]);
    let combined = 0.7 * g[0] - 2.0 * g[1];
    assert!((g[2] - combined).abs() <= 1e-12 * combined.abs().max(1.0), "{} vs {combined}", g[2]);
}

fn history_bytes(h: &FitHistory) -> Vec<u8> {
    let mut out = Vec::new();
    h.write_csv(&mut out, false).unwrap();
    out
}

#[test]
fn fit_is_reproducible_across_worker_counts() {
    let truth = vec![0.0, 0.0];
    let d = data(&proto1d(truth.clone()), 200, DT1, T1, 340);
    let cfg = config(proto1d(vec![5.0, 1.0]), truth, 3, 341);
    let reference = fit(&FitConfig { execution: Execution::Sequential, ..cfg.clone() }, &d).unwrap();
    for workers in [1, 3] {
        let h = with_workers(workers, || fit(&cfg, &d).unwrap());
        assert_eq!(history_bytes(&h), history_bytes(&reference), "{workers} workers");
    }
    let text = String::from_utf8(history_bytes(&reference)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,gamma0,gamma1,grad0,grad1,distance");
    assert_eq!(lines.len(), 1 + 4);
}

#[test]
fn median_distance_falls_over_the_fit() {
    let truth = vec![0.0, 0.0];
    let mut first = Vec::new();
    let mut last = Vec::new();
    for s in 0..5 {
        let d = data(&proto1d(truth.clone()), 200, DT1, T1, 350 + s);
        let h = fit(&config(proto1d(vec![5.0, 1.0]), truth.clone(), 10, 360 + s), &d).unwrap();
        assert_eq!(h.records.len(), 11);
        first.push(h.records[0].distance.unwrap());
        last.push(h.records[10].distance.unwrap());
    }
    last.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(last[2] < first[0] / 2.0, "median final distance {} from {}", last[2], first[0]);
}
