use lsd_core::detect::{auroc, eval_at_threshold, fit_logistic, logistic_loss, pca2};
use lsd_core::numerics::{dot, normalize, Matrix, Rng};
use proptest::prelude::*;

fn brute_force_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2.0 * pos as f64 * neg as f64)
}

fn fixture(rng: &mut Rng, n: usize, tie_levels: Option<usize>) -> (Vec<f64>, Vec<u8>) {
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    rng.shuffle(&mut labels);
    let scores = labels
        .iter()
        .map(|&l| {
            let s = rng.normal() + f64::from(l);
            match tie_levels {
                Some(k) => (s * k as f64).round() / k as f64,
                None => s,
            }
        })
        .collect();
    (scores, labels)
}

#[test]
fn auroc_equals_pair_counting_without_ties() {
    let mut rng = Rng::new(31);
    for n in 2..=200 {
        let (scores, labels) = fixture(&mut rng, n, None);
        assert_eq!(auroc(&scores, &labels).unwrap(), brute_force_auroc(&scores, &labels), "n={n}");
    }
}

#[test]
fn auroc_counts_ties_as_half() {
    let mut rng = Rng::new(32);
    for n in 2..=200 {
        let (scores, labels) = fixture(&mut rng, n, Some(2));
        assert_eq!(auroc(&scores, &labels).unwrap(), brute_force_auroc(&scores, &labels), "n={n}");
    }
    assert_eq!(auroc(&[0.5, 0.5, 0.9, 0.1], &[1, 0, 1, 0]).unwrap(), 0.875);
}

#[test]
fn logistic_loss_beats_zero_parameters() {
    let mut rng = Rng::new(40);
    for _ in 0..10 {
        let rows: Vec<Vec<f64>> = (0..60).map(|_| rng.normal_vec(4)).collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] + 0.8 * rng.normal() > 0.0)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_logistic(&x, &y, 1e-4).unwrap();
        assert!(m.final_loss <= logistic_loss(&x, &y, &[0.0; 4], 0.0, 1e-4));
        assert!(m.gradient_norm < 1e-6);
    }
}

fn rotation(rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < n {
        let mut v = rng.normal_vec(n);
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        if let Ok(u) = normalize(&v) {
            basis.push(u);
        }
    }
    basis
}

fn anisotropic(rng: &mut Rng, n: usize, scales: &[f64]) -> Vec<Vec<f64>> {
    (0..n).map(|_| scales.iter().map(|s| s * rng.normal()).collect()).collect()
}

#[test]
fn pca_variance_is_rotation_invariant() {
    let mut rng = Rng::new(50);
    let rows = anisotropic(&mut rng, 80, &[5.0, 2.0, 0.5, 0.1]);
    let q = rotation(&mut rng, 4);
    let rotated: Vec<Vec<f64>> = rows.iter().map(|r| q.iter().map(|qr| dot(qr, r)).collect()).collect();
    let a = pca2(&Matrix::from_rows(&rows).unwrap()).unwrap();
    let b = pca2(&Matrix::from_rows(&rotated).unwrap()).unwrap();
    for k in 0..2 {
        assert!((a.explained_variance[k] - b.explained_variance[k]).abs() < 1e-9);
    }
}

#[test]
fn pca_reconstructs_rank_two_data() {
    let mut rng = Rng::new(51);
    let u = rng.unit_vec(5);
    let mut w = rng.normal_vec(5);
    let c = dot(&w, &u);
    w.iter_mut().zip(&u).for_each(|(x, y)| *x -= c * y);
    let w = normalize(&w).unwrap();
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let (a, b) = (4.0 * rng.normal(), rng.normal());
            (0..5).map(|j| 1.0 + a * u[j] + b * w[j]).collect()
        })
        .collect();
    let p = pca2(&Matrix::from_rows(&rows).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for (row, xy) in rows.iter().zip(&p.coords) {
        for j in 0..5 {
            let rec = p.mean[j] + xy[0] * p.components[0][j] + xy[1] * p.components[1][j];
            worst = worst.max((rec - row[j]).abs());
        }
    }
    assert!(worst < 1e-8, "max reconstruction error {worst:e}");
}

proptest! {
    #[test]
    fn auroc_is_a_rank_statistic(seed in 0u64..1000, n in 2usize..80) {
        let mut rng = Rng::new(seed);
        let (scores, labels) = fixture(&mut rng, n, None);
        let a = auroc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(a, auroc(&transformed, &labels).unwrap());
        let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        prop_assert!((auroc(&flipped, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn composite_is_mean_of_f1_and_auroc(seed in 0u64..1000, n in 2usize..60, t in 0.0f64..1.0) {
        let mut rng = Rng::new(seed);
        let (scores, labels) = fixture(&mut rng, n, Some(4));
        let e = eval_at_threshold(&scores, &labels, t).unwrap();
        prop_assert!((e.composite - (e.f1 + e.auroc) / 2.0).abs() <= 1e-12);
        for v in [e.precision, e.recall, e.f1, e.auroc] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
