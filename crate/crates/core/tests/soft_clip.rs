use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsdec_core::captioner::{masked_pool, MaskConfig};
use wsdec_core::graph::Graph;
use wsdec_core::params::ParamStore;
use wsdec_core::{TemporalSegment, Tensor};

fn random_features(rng: &mut ChaCha8Rng, steps: usize, dim: usize) -> Tensor {
    Tensor::from_vec(steps, dim, (0..steps * dim).map(|_| rng.random_range(-2.0..2.0)).collect())
}

fn projected_pool(features: &Tensor, proj: &[f64], m: f64, w: f64, k: f64) -> f64 {
    let (ctx, _) = masked_pool(features, TemporalSegment::new(m, w), MaskConfig::new(k).unwrap());
    ctx.iter().zip(proj).map(|(a, b)| a * b).sum()
}

/// Largest relative error between the analytic and central-difference
/// gradients of `proj · pool(m, w)` with respect to `m` and `w`.
fn gradient_error(features: &Tensor, proj: &[f64], m: f64, w: f64, k: f64) -> f64 {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let f = g.input(features.clone());
    let mn = g.constant_scalar(m);
    let wn = g.constant_scalar(w);
    let pooled = g.masked_pool(f, mn, wn, k);
    let p = g.constant_vec(proj.to_vec());
    let y = g.dot(pooled.node, p);
    let back = g.backward(y);
    let analytic = [back.grad(mn).unwrap().data()[0], back.grad(wn).unwrap().data()[0]];
    let h = 1e-6;
    let numeric = [
        (projected_pool(features, proj, m + h, w, k) - projected_pool(features, proj, m - h, w, k)) / (2.0 * h),
        (projected_pool(features, proj, m, w + h, k) - projected_pool(features, proj, m, w - h, k)) / (2.0 * h),
    ];
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn pooling_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let steps = rng.random_range(8..=64);
        let dim = rng.random_range(1..=8);
        let features = random_features(&mut rng, steps, dim);
        let proj: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = rng.random_range(0.15..0.85);
        let w = rng.random_range(0.1..0.6);
        let k = rng.random_range(5.0..=50.0);
        let err = gradient_error(&features, &proj, m, w, k);
        assert!(err < 1e-3, "relative error {err} at T={steps} m={m} w={w} K={k}");
    }
}

/// Boundaries halfway between frames `a` and `a + 1`, and `b` and `b + 1`
/// (1-based), so the window covers exactly frames `a + 1 ..= b`.
fn aligned_segment(a: usize, b: usize, steps: usize) -> TemporalSegment {
    TemporalSegment::from_bounds((a as f64 + 0.5) / steps as f64, (b as f64 + 0.5) / steps as f64)
}

fn hard_clipped_mean(features: &Tensor, a: usize, b: usize) -> Vec<f64> {
    let mut out = vec![0.0; features.cols()];
    for t in a..b {
        for (o, x) in out.iter_mut().zip(features.row(t)) {
            *o += x;
        }
    }
    out.iter().map(|x| x / (b - a) as f64).collect()
}

#[test]
fn sharp_mask_equals_hard_clip_on_aligned_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = MaskConfig::new(500.0).unwrap();
    for _ in 0..100 {
        let steps = rng.random_range(4..=24);
        let dim = rng.random_range(1..=6);
        let features = random_features(&mut rng, steps, dim);
        let a = rng.random_range(0..steps);
        let b = rng.random_range(a + 1..=steps);
        let (ctx, degenerate) = masked_pool(&features, aligned_segment(a, b, steps), cfg);
        assert!(!degenerate);
        for (x, y) in ctx.iter().zip(hard_clipped_mean(&features, a, b)) {
            assert!((x - y).abs() < 1e-3, "T={steps} frames {}..={b}: {x} vs {y}", a + 1);
        }
    }
}

#[test]
fn constant_rows_pool_to_that_row() {
    let u = [0.3, -1.2, 4.0];
    let rows: Vec<f64> = (0..10).flat_map(|_| u).collect();
    let f = Tensor::from_vec(10, 3, rows);
    for (m, w) in [(0.5, 0.2), (0.1, 0.05), (0.9, 1.0), (3.0, 0.02)] {
        let (ctx, _) = masked_pool(&f, TemporalSegment::new(m, w), MaskConfig::default());
        for (a, b) in ctx.iter().zip(u) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
