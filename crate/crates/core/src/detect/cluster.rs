use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, Matrix, Rng};

const K: usize = 2;
const RESTARTS: u64 = 10;
const MAX_LLOYD_ITER: usize = 300;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the kept restart.
    pub inertia_history: Vec<f64>,
    /// Best-permutation agreement with the labels, when labels were given.
    pub clustering_accuracy: Option<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lower index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(x, &centroids[0]));
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(x: &Matrix, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centroids = vec![x.row(rng.below(n)).to_vec()];
    while centroids.len() < K {
        let d2: Vec<f64> = (0..n).map(|i| nearest(x.row(i), &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centroids.push(x.row(pick).to_vec());
    }
    centroids
}

fn lloyd(x: &Matrix, mut centroids: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let n = x.rows();
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITER {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, a) in assignments.iter_mut().enumerate() {
            let (c, d) = nearest(x.row(i), &centroids);
            inertia += d;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; x.cols()]; K];
        let mut counts = [0usize; K];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..K {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    (assignments, centroids, history)
}

/// Agreement between clusters and labels, maximized over the two cluster-to-label maps.
pub fn clustering_accuracy(assignments: &[usize], labels: &[u8]) -> f64 {
    let agree = assignments.iter().zip(labels).filter(|(&a, &l)| a == usize::from(l)).count() as f64
        / labels.len() as f64;
    agree.max(1.0 - agree)
}

/// Two-cluster k-means: k-means++ seeding, Lloyd iterations, 10 restarts,
/// keeping the lowest final inertia.
pub fn kmeans2(x: &Matrix, labels: Option<&[u8]>, seed: u64) -> Result<KMeansResult> {
    if x.rows() < K {
        return Err(Error::InsufficientData(format!("k-means needs at least {K} rows, got {}", x.rows())));
    }
    let root = Rng::new(seed);
    let mut best: Option<KMeansResult> = None;
    for r in 0..RESTARTS {
        let mut rng = root.fork(r);
        let (assignments, centroids, history) = lloyd(x, plus_plus_seeds(x, &mut rng));
        let inertia = *history.last().expect("at least one iteration");
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult {
                assignments,
                centroids,
                inertia,
                inertia_history: history,
                clustering_accuracy: None,
            });
        }
    }
    let mut best = best.expect("at least one restart");
    best.clustering_accuracy = labels.map(|l| clustering_accuracy(&best.assignments, l));
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub coords: Vec<[f64; 2]>,
}

fn covariance(x: &Matrix, mean: &[f64]) -> Matrix {
    let (n, p) = x.shape();
    let mut c = Matrix::zeros(p, p);
    for i in 0..n {
        let centered: Vec<f64> = x.row(i).iter().zip(mean).map(|(v, m)| v - m).collect();
        c.add_outer(&centered, &centered, 1.0 / (n as f64 - 1.0));
    }
    c
}

fn power_iteration(c: &Matrix, start: &[f64]) -> (Vec<f64>, f64) {
    let mut v = start.to_vec();
    let norm = l2_norm(&v);
    v.iter_mut().for_each(|x| *x /= norm);
    for _ in 0..POWER_MAX_ITER {
        let w = c.matvec(&v).expect("square matrix");
        let wn = l2_norm(&w);
        if wn < 1e-300 {
            return (v, 0.0);
        }
        let next: Vec<f64> = w.iter().map(|x| x / wn).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < POWER_TOL {
            break;
        }
    }
    let lambda = dot(&v, &c.matvec(&v).expect("square matrix"));
    (v, lambda)
}

fn fix_sign(v: &mut [f64]) {
    let mut idx = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[idx].abs() {
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top two principal components by power iteration with deflation.
pub fn pca2(x: &Matrix) -> Result<Pca> {
    let (n, p) = x.shape();
    if n < 3 {
        return Err(Error::InsufficientData(format!("PCA needs at least 3 rows, got {n}")));
    }
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut c = covariance(x, &mean);
    let trace: f64 = (0..p).map(|j| c.get(j, j)).sum();
    if trace <= 1e-300 {
        return Err(Error::DegenerateInput("PCA input has zero variance".into()));
    }
    let mut rng = Rng::new(0x5eed);
    let mut components: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut explained = [0.0; 2];
    for k in 0..2 {
        let mut start = rng.normal_vec(p);
        for prev in components.iter().take(k) {
            let proj = dot(&start, prev);
            start.iter_mut().zip(prev).for_each(|(s, q)| *s -= proj * q);
        }
        let (mut v, lambda) = power_iteration(&c, &start);
        fix_sign(&mut v);
        c.add_outer(&v, &v, -lambda);
        explained[k] = lambda.max(0.0);
        components[k] = v;
    }
    let coords = (0..n)
        .map(|i| {
            let centered: Vec<f64> = x.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect();
            [dot(&centered, &components[0]), dot(&centered, &components[1])]
        })
        .collect();
    Ok(Pca { mean, components, explained_variance: explained, coords })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clouds(seed: u64, n: usize, sep: f64) -> (Matrix, Vec<u8>) {
        let mut rng = Rng::new(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let l = (i % 2) as u8;
            let c = if l == 1 { sep } else { -sep };
            rows.push(vec![c + 0.3 * rng.normal(), 0.3 * rng.normal(), c + 0.3 * rng.normal()]);
            labels.push(l);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separated_clouds_are_recovered() {
        let (x, y) = clouds(1, 200, 3.0);
        let r = kmeans2(&x, Some(&y), 7).unwrap();
        assert!(r.clustering_accuracy.unwrap() >= 0.99);
        let flipped: Vec<u8> = y.iter().map(|l| 1 - l).collect();
        assert_eq!(clustering_accuracy(&r.assignments, &flipped), r.clustering_accuracy.unwrap());
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn identical_points_give_majority_fraction() {
        let x = Matrix::from_rows(&vec![vec![1.0, 2.0]; 10]).unwrap();
        let y = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let r = kmeans2(&x, Some(&y), 3).unwrap();
        assert!((r.clustering_accuracy.unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn kmeans_needs_two_rows() {
        assert!(kmeans2(&Matrix::zeros(1, 2), None, 0).is_err());
    }

    #[test]
    fn kmeans_is_seeded() {
        let (x, _) = clouds(2, 50, 0.5);
        assert_eq!(kmeans2(&x, None, 11).unwrap(), kmeans2(&x, None, 11).unwrap());
    }

    #[test]
    fn pca_on_a_line() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca2(&Matrix::from_rows(&rows).unwrap()).unwrap();
        assert!(p.explained_variance[1] < 1e-9 * p.explained_variance[0]);
        assert!(p.components[0][1] > 0.0);
    }

    #[test]
    fn pca_rejects_constant_data() {
        let x = Matrix::from_rows(&vec![vec![1.0, 1.0]; 5]).unwrap();
        assert!(matches!(pca2(&x), Err(Error::DegenerateInput(_))));
    }
}
