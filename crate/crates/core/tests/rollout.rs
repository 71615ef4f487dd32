mod common;

use bast_core::rollout::{
    bast_rollout, cumulative_rollout, export_heatmap, layer_rollout, rollout_from_attention, upsample_nearest,
    HeatmapMeta, Matrix,
};
use bast_core::{patch_counts, BastModel, Integration, ModelConfig, Sharing};
use bast_tensor::Tensor;
use common::random_input;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random row-stochastic `[heads, n, n]` attention.
fn random_attention(heads: usize, n: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let mut data = Vec::with_capacity(heads * n * n);
    for _ in 0..heads * n {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| (v / s) as f32));
    }
    Tensor::new([heads, n, n], data).unwrap()
}

fn oracle_layer(attn: &Tensor<f32>) -> DMatrix<f64> {
    let s = attn.shape();
    let (heads, n) = (s[0], s[1]);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for h in 0..heads {
        m += DMatrix::from_row_iterator(n, n, attn.data()[h * n * n..][..n * n].iter().map(|&v| f64::from(v)));
    }
    m /= heads as f64;
    m += DMatrix::identity(n, n);
    rownorm(m)
}

fn rownorm(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

fn assert_close(a: &Matrix, b: &DMatrix<f64>, tol: f64) {
    assert_eq!((a.n, a.n), b.shape());
    for i in 0..a.n {
        for j in 0..a.n {
            assert!((a.get(i, j) - b[(i, j)]).abs() <= tol, "({i}, {j}): {} vs {}", a.get(i, j), b[(i, j)]);
        }
    }
}

fn assert_stochastic(m: &Matrix) {
    for s in m.row_sums() {
        assert!((s - 1.0).abs() <= 1e-5, "{s}");
    }
}

#[test]
fn uniform_two_by_two() {
    let a = Tensor::<f32>::full([1, 2, 2], 0.5);
    let r = layer_rollout(&a).unwrap();
    assert_eq!(r.data, vec![0.75, 0.25, 0.25, 0.75]);
}

#[test]
fn identity_attention_is_a_fixed_point() {
    let mut eye = Tensor::<f32>::zeros([3, 5, 5]);
    for h in 0..3 {
        for i in 0..5 {
            eye.data_mut()[h * 25 + i * 6] = 1.0;
        }
    }
    let rs = cumulative_rollout(&[eye.clone(), eye.clone(), eye], None).unwrap();
    for r in rs {
        assert_eq!(r, Matrix::identity(5));
    }
}

#[test]
fn non_square_attention_is_error() {
    assert!(layer_rollout(&Tensor::<f32>::zeros([2, 3, 4])).is_err());
    assert!(layer_rollout(&Tensor::<f32>::zeros([3, 4])).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layers = [random_attention(1, 3, &mut rng), random_attention(1, 4, &mut rng)];
    assert!(cumulative_rollout(&layers, None).is_err());
}

#[test]
fn three_layers_match_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layers: Vec<_> = (0..3).map(|_| random_attention(4, 24, &mut rng)).collect();
    let rs = cumulative_rollout(&layers, None).unwrap();
    let mut oracle = DMatrix::<f64>::identity(24, 24);
    for (r, a) in rs.iter().zip(&layers) {
        oracle = oracle_layer(a) * oracle;
        assert_stochastic(r);
        assert_close(r, &oracle, 1e-12);
    }
}

#[test]
fn central_initialization_sums_both_ears() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = patch_counts(33, 25, 16, 6).unwrap();
    let n = grid.len();
    let left: Vec<_> = (0..2).map(|_| random_attention(2, n, &mut rng)).collect();
    let right: Vec<_> = (0..2).map(|_| random_attention(2, n, &mut rng)).collect();
    let central: Vec<_> = (0..3).map(|_| random_attention(2, n, &mut rng)).collect();
    let rec = rollout_from_attention(grid, left.clone(), right.clone(), central.clone()).unwrap();

    let chain = |layers: &[Tensor<f32>], init: DMatrix<f64>| layers.iter().fold(init, |r, a| oracle_layer(a) * r);
    let l = chain(&left, DMatrix::identity(n, n));
    let r = chain(&right, DMatrix::identity(n, n));
    let init = rownorm(&l + &r);
    let c = chain(&central, init.clone());
    assert_close(&rec.central_init, &init, 1e-12);
    assert_close(rec.central.last().unwrap(), &c, 1e-12);
    for m in rec.left.cumulative.iter().chain(&rec.right.cumulative).chain(&rec.central.cumulative) {
        assert_stochastic(m);
    }
    let means: Vec<f64> = c.column_iter().map(|col| col.sum() / n as f64).collect();
    for (a, b) in rec.central_relevance.iter().zip(means) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(rollout_from_attention(grid, vec![], right, central).is_err());
}

#[test]
fn model_rollout_at_canonical_geometry() {
    let cfg = ModelConfig {
        dim: 32,
        heads: 2,
        layers: 2,
        mlp_dim: 32,
        ..ModelConfig::canonical(Integration::Add, Sharing::Shared)
    };
    let model = BastModel::<f32>::new(cfg, 3).unwrap();
    let x = random_input::<f32>(2, 129, 61, 4);
    let y = random_input::<f32>(2, 129, 61, 5);
    let recs = bast_rollout(&model, &x, &x).unwrap();
    assert_eq!(recs.len(), 2);
    for rec in &recs {
        assert_eq!(rec.left.raw[0].shape(), &[2, 180, 180]);
        assert_eq!(rec.left.cumulative, rec.right.cumulative);
        assert_eq!((rec.grid.n_h, rec.grid.n_t), (20, 9));
        assert_eq!(rec.central_relevance.len(), 180);
        let total: f64 = rec.central_relevance.iter().sum();
        assert!((total - 1.0).abs() <= 1e-4);
        assert!(rec.central_relevance.iter().all(|&v| v >= 0.0));
        for m in rec.left.cumulative.iter().chain(&rec.central.cumulative) {
            assert_stochastic(m);
        }
    }
    let recs = bast_rollout(&model, &x, &y).unwrap();
    assert_ne!(recs[0].left.cumulative, recs[0].right.cumulative);
}

#[test]
fn rollout_needs_attention_layers() {
    let cfg = ModelConfig {
        layers: 0,
        ..common::tiny_config(Integration::Add, Sharing::Separate)
    };
    let model = BastModel::<f32>::new(cfg, 0).unwrap();
    let x = random_input::<f32>(1, 33, 25, 0);
    assert!(bast_rollout(&model, &x, &x).is_err());
}

#[test]
fn overlay_upsampling() {
    let grid = patch_counts(129, 61, 16, 6).unwrap();
    let flat = upsample_nearest(&grid, &[0.25; 180], 129, 61);
    assert_eq!(flat.len(), 129 * 61);
    assert!(flat.iter().all(|&v| v == 0.25));

    let mut values = vec![0.0; 180];
    values[grid.index(7, 4)] = 1.0;
    let up = upsample_nearest(&grid, &values, 129, 61);
    let argmax = up.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let (r, c) = (argmax / 61, argmax % 61);
    // the selected cell lies inside the patch's footprint
    assert!((42..58).contains(&r) && (24..40).contains(&c), "({r}, {c})");
    assert!(up.iter().filter(|&&v| v == 1.0).count() >= 6 * 6);
}

#[test]
fn heatmap_files() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = patch_counts(129, 61, 16, 6).unwrap();
    let mut att = || vec![random_attention(1, 180, &mut rng)];
    let rec = rollout_from_attention(grid, att(), att(), att()).unwrap();
    let meta = HeatmapMeta {
        sample_id: "AE-s01-090".into(),
        azimuth: 90,
        environment: "AE".into(),
        n_h: 20,
        n_t: 9,
        overlay_height: 129,
        overlay_width: 61,
    };
    let dir = tempfile::tempdir().unwrap();
    export_heatmap(dir.path(), &rec, &meta).unwrap();
    for ear in ["left", "right", "center"] {
        let grid_csv = std::fs::read_to_string(dir.path().join(format!("rollout_AE-s01-090_{ear}.csv"))).unwrap();
        assert_eq!(grid_csv.lines().count(), 20);
        assert!(grid_csv.lines().all(|l| l.split(',').count() == 9));
        let overlay = std::fs::read_to_string(dir.path().join(format!("rollout_AE-s01-090_{ear}_overlay.csv"))).unwrap();
        assert_eq!(overlay.lines().count(), 129);
        assert!(overlay.lines().all(|l| l.split(',').count() == 61));
    }
    let meta_json = std::fs::read_to_string(dir.path().join("rollout_AE-s01-090_meta.json")).unwrap();
    assert!(meta_json.contains("\"azimuth\": 90"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rollout_rows_stay_stochastic(seed in any::<u64>(), layers in 1usize..5, n in 1usize..20, heads in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atts: Vec<_> = (0..layers).map(|_| random_attention(heads, n, &mut rng)).collect();
        for r in cumulative_rollout(&atts, None).unwrap() {
            for s in r.row_sums() {
                prop_assert!((s - 1.0).abs() <= 1e-5);
            }
            prop_assert!(r.data.iter().all(|&v| v >= 0.0));
        }
    }
}
