use funcreg_lab::funcspace::{
    dispersion, dispersion_by_tag, functional_vector, pca_embed, silhouette, tsne_embed, EmbedConfig,
};
use funcreg_lab::models::{Architecture, Model};
use funcreg_lab::numkit::{random_orthonormal_basis, Matrix, RngStream};
use funcreg_lab::synthgen::{DataSpec, WorldKind};
use funcreg_lab::trainer::Pipeline;
use proptest::prelude::*;

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|x| x.as_slice()).collect()
}

fn dist(m: &Matrix, i: usize, j: usize) -> f64 {
    ((m[(i, 0)] - m[(j, 0)]).powi(2) + (m[(i, 1)] - m[(j, 1)]).powi(2)).sqrt()
}

#[test]
fn separated_clusters_stay_separated() {
    let mut rng = RngStream::new(17);
    let dim = 10;
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..50 {
            let mut p: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
            p[0] += 10.0 * c as f64;
            pts.push(p);
            labels.push(c);
        }
    }
    let y = tsne_embed(&refs(&pts), &EmbedConfig::default()).unwrap();
    assert!(y.is_finite());
    let s = silhouette(&y, &labels).unwrap();
    assert!(s > 0.5, "silhouette {s}");
    for k in 0..2 {
        let mean: f64 = (0..100).map(|i| y[(i, k)]).sum::<f64>() / 100.0;
        assert!(mean.abs() < 1e-9);
    }
}

#[test]
fn tetrahedron_stays_symmetric() {
    let pts = vec![
        vec![1.0, 1.0, 1.0],
        vec![1.0, -1.0, -1.0],
        vec![-1.0, 1.0, -1.0],
        vec![-1.0, -1.0, 1.0],
    ];
    let cfg = EmbedConfig {
        perplexity: 0.9,
        ..EmbedConfig::default()
    };
    let y = tsne_embed(&refs(&pts), &cfg).unwrap();
    let d: Vec<f64> = (0..4).flat_map(|i| ((i + 1)..4).map(move |j| (i, j))).map(|(i, j)| dist(&y, i, j)).collect();
    // four points in the plane cannot be equidistant; the best layout is a
    // square, whose sides and diagonals sit within 25% of the mean distance
    let mean = d.iter().sum::<f64>() / 6.0;
    assert!(d.iter().all(|x| (x - mean).abs() <= 0.25 * mean), "{d:?}");
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    assert!((sorted[3] - sorted[0]).abs() <= 1e-3 * sorted[0], "{d:?}");
    assert!((sorted[5] / sorted[0] - 2f64.sqrt()).abs() < 1e-3, "{d:?}");
}

#[test]
fn tsne_is_bitwise_deterministic() {
    let mut rng = RngStream::new(5);
    let pts: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.standard_normal()).collect()).collect();
    let cfg = EmbedConfig {
        perplexity: 5.0,
        iterations: 300,
        seed: 9,
        ..EmbedConfig::default()
    };
    let a = tsne_embed(&refs(&pts), &cfg).unwrap();
    let b = tsne_embed(&refs(&pts), &cfg).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
}

#[test]
fn pca_recovers_planar_data() {
    let mut rng = RngStream::new(2);
    let q = random_orthonormal_basis(&mut rng, 6).unwrap();
    // points in a random plane of R^6
    let pts: Vec<Vec<f64>> = (0..25)
        .map(|_| {
            let (u, v) = (3.0 * rng.standard_normal(), rng.standard_normal());
            (0..6).map(|k| u * q[(k, 0)] + v * q[(k, 1)] + 0.5).collect()
        })
        .collect();
    let y = pca_embed(&refs(&pts)).unwrap();
    for i in 0..25 {
        for j in 0..25 {
            let orig: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((dist(&y, i, j) - orig).abs() < 1e-8);
        }
    }
    let var = |k: usize| (0..25).map(|i| y[(i, k)].powi(2)).sum::<f64>();
    assert!(var(0) >= var(1));
}

#[test]
fn pca_both_code_paths_agree_on_rank_one() {
    // more points than dimensions, and fewer
    for (n, dim) in [(12usize, 3usize), (4, 9)] {
        let pts: Vec<Vec<f64>> = (0..n).map(|i| (0..dim).map(|k| i as f64 * (k as f64 + 1.0)).collect()).collect();
        let y = pca_embed(&refs(&pts)).unwrap();
        for i in 0..n {
            assert!(y[(i, 1)].abs() <= 1e-8, "n={n} second coordinate {}", y[(i, 1)]);
        }
        let var = |k: usize| (0..n).map(|i| y[(i, k)].powi(2)).sum::<f64>();
        assert!(var(0) >= var(1));
    }
}

#[test]
fn dispersion_matches_double_loop() {
    let mut rng = RngStream::new(44);
    let pts: Vec<Vec<f64>> = (0..10).map(|_| (0..7).map(|_| rng.standard_normal()).collect()).collect();
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..10 {
        for j in 0..10 {
            if i < j {
                let s: f64 = (0..7).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
                total += s.sqrt();
                count += 1;
            }
        }
    }
    let got = dispersion(&refs(&pts)).unwrap();
    assert!((got - total / count as f64).abs() < 1e-12);
}

#[test]
fn functional_vectors_follow_test_order() {
    let mut rng = RngStream::new(1);
    let spec = DataSpec::generate(WorldKind::AutoEncoder, &mut rng, 8, 2).unwrap();
    let test = spec.sample(15, &mut rng, true).unwrap();
    let model = Model::random(Architecture::LinearAe, 8, 2, false, &mut rng);
    let v = functional_vector(&model, &test, Pipeline::FuncReg, 3).unwrap();
    assert_eq!(v.values.len(), 15);
    assert_eq!(v.values[4], model.predict(test.input(4)).unwrap());
    // a = 0 at initialization, so every prediction is zero
    assert!(v.values.iter().all(|x| *x == 0.0));
    let w = functional_vector(&model, &test, Pipeline::EndToEnd, 4).unwrap();
    assert_eq!(v.values, w.values);
    let table = dispersion_by_tag(&[v.clone(), v, w.clone(), w]).unwrap();
    assert_eq!(table, vec![(Pipeline::FuncReg, 0.0), (Pipeline::EndToEnd, 0.0)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dispersion_invariant_under_isometry(seed in 0u64..1000, n in 2usize..8) {
        let mut rng = RngStream::new(seed);
        let dim = 5;
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.standard_normal()).collect()).collect();
        let q = random_orthonormal_basis(&mut rng, dim).unwrap();
        let rotated: Vec<Vec<f64>> = pts.iter().map(|p| q.matvec(p).unwrap()).collect();
        let a = dispersion(&refs(&pts)).unwrap();
        let b = dispersion(&refs(&rotated)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }
}
