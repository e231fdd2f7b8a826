use gpsm::gp::InducingSelection;
use gpsm::kernels::Hyperparameters;
use gpsm::semantic_map::{train_gpsm, GpsmConfig, GpsmModel, Inference};
use gpsm::synthetic::gaussian_clusters;
use gpsm::ClassSet;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn centers() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 0.0, 0.0],
        vec![2.0, 0.0, 0.5],
        vec![0.5, 2.0, -0.5],
    ]
}

fn theta0() -> Hyperparameters {
    Hyperparameters::isotropic(3, 0.5, 2.0, 0.01)
}

fn fitc(n_u: usize) -> GpsmConfig {
    GpsmConfig {
        inference: Inference::Fitc {
            num_inducing: n_u,
            selection: InducingSelection::FarthestPoint,
        },
        ..GpsmConfig::default()
    }
}

fn model(x: &DMatrix<f64>, labels: &[u16], config: &GpsmConfig) -> GpsmModel {
    train_gpsm(
        x,
        labels,
        &ClassSet::numbered(3).unwrap(),
        config,
        &theta0(),
    )
    .unwrap()
}

fn columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |r, c| x[(r, idx[c])])
}

#[test]
fn unlabeled_cluster_points_recover_their_label() {
    let (x, labels) = gaussian_clusters(&centers(), 90, 0.35, 11).unwrap();
    // Keep labels on every third point, query the other two thirds.
    let kept: Vec<usize> = (0..x.ncols()).filter(|i| i % 3 == 0).collect();
    let hidden: Vec<usize> = (0..x.ncols()).filter(|i| i % 3 != 0).collect();
    let train_labels: Vec<u16> = kept.iter().map(|&i| labels[i]).collect();
    for config in [
        GpsmConfig {
            inference: Inference::Exact,
            ..GpsmConfig::default()
        },
        fitc(40),
    ] {
        let m = model(&columns(&x, &kept), &train_labels, &config);
        let preds = m.query_batch(&columns(&x, &hidden)).unwrap();
        for class in 1..=3u16 {
            let mine: Vec<_> = hidden
                .iter()
                .zip(&preds)
                .filter(|(&i, _)| labels[i] == class)
                .collect();
            let hits = mine.iter().filter(|(_, p)| p.hard_label == class).count();
            let rate = hits as f64 / mine.len() as f64;
            assert!(
                rate > 0.9,
                "class {class}: recovery {rate} with {:?}",
                config.inference
            );
        }
    }
}

#[test]
fn probabilities_are_continuous_and_normalized() {
    let (x, labels) = gaussian_clusters(&centers(), 40, 0.4, 12).unwrap();
    let m = model(&x, &labels, &fitc(30));
    let delta = 1e-4 * 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..3.0)).collect();
        let dir: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q2: Vec<f64> = q
            .iter()
            .zip(&dir)
            .map(|(a, u)| a + delta * u / norm)
            .collect();
        let (a, b) = (m.query(&q).unwrap(), m.query(&q2).unwrap());
        assert!((a.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (pa, pb) in a.class_probs.iter().zip(&b.class_probs) {
            assert!((pa - pb).abs() < 1e-3, "{pa} vs {pb}");
        }
    }
}

#[test]
fn relabeling_classes_permutes_probabilities() {
    let (x, labels) = gaussian_clusters(&centers(), 30, 0.4, 13).unwrap();
    // 1 -> 3, 2 -> 1, 3 -> 2
    let perm = |c: u16| [0, 3, 1, 2][c as usize];
    let permuted: Vec<u16> = labels.iter().map(|&c| perm(c)).collect();
    let config = fitc(25);
    let (a, b) = (model(&x, &labels, &config), model(&x, &permuted, &config));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = DMatrix::from_fn(3, 200, |_, _| rng.random_range(-2.0..3.0));
    for (pa, pb) in a
        .query_batch(&q)
        .unwrap()
        .iter()
        .zip(&b.query_batch(&q).unwrap())
    {
        for c in 1..=3u16 {
            let (i, j) = (c as usize - 1, perm(c) as usize - 1);
            assert!((pa.class_probs[i] - pb.class_probs[j]).abs() < 1e-12);
        }
        // Ties would break by index, so only compare decisive predictions.
        let mut sorted = pa.class_probs.clone();
        sorted.sort_by(|u, v| v.total_cmp(u));
        if sorted[0] - sorted[1] > 1e-9 {
            assert_eq!(pb.hard_label, perm(pa.hard_label));
        }
    }
}

#[test]
fn thousand_point_batch_matches_single_queries() {
    let (x, labels) = gaussian_clusters(&centers(), 60, 0.4, 14).unwrap();
    let m = model(&x, &labels, &fitc(50));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = DMatrix::from_fn(3, 1000, |_, _| rng.random_range(-2.0..3.5));
    let batch = m.query_batch(&q).unwrap();
    assert_eq!(batch.len(), 1000);
    for (j, p) in batch.iter().enumerate() {
        let single = m.query(q.column(j).as_slice()).unwrap();
        assert_eq!(p.hard_label, single.hard_label);
        for (a, b) in p.class_probs.iter().zip(&single.class_probs) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
    let one = m.query_batch(&columns(&q, &[17])).unwrap();
    assert_eq!(one[0], batch[17]);
}

#[test]
fn batch_is_permutation_equivariant() {
    let (x, labels) = gaussian_clusters(&centers(), 30, 0.4, 15).unwrap();
    let m = model(&x, &labels, &fitc(20));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = DMatrix::from_fn(3, 100, |_, _| rng.random_range(-2.0..3.0));
    let mut order: Vec<usize> = (0..100).collect();
    order.shuffle(&mut rng);
    let base = m.query_batch(&q).unwrap();
    let shuffled = m.query_batch(&columns(&q, &order)).unwrap();
    for (k, &j) in order.iter().enumerate() {
        assert_eq!(shuffled[k], base[j]);
    }
}

#[test]
fn saved_model_predicts_the_same() {
    let (x, labels) = gaussian_clusters(&centers(), 30, 0.4, 16).unwrap();
    let m = model(&x, &labels, &fitc(20));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    m.save(&path).unwrap();
    let back = GpsmModel::load(&path).unwrap();
    assert_eq!(back.num_train(), 90);
    assert_eq!(back.num_inducing(), 20);
    for j in (0..90).step_by(7) {
        let q = x.column(j);
        let (a, b) = (
            m.query(q.as_slice()).unwrap(),
            back.query(q.as_slice()).unwrap(),
        );
        for (u, v) in a.class_probs.iter().zip(&b.class_probs) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
