//! Lloyd's k-means with seeded farthest-point initialization.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{PsaError, Result};
use crate::rng::{self, Stream};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<F> {
    pub assignments: Vec<usize>,
    pub centroids: Array2<F>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<F>,
}

fn sq_dist<F: Scalar>(a: ArrayView1<F>, b: ArrayView1<F>) -> F {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

fn nearest<F: Scalar>(x: ArrayView1<F>, centroids: &Array2<F>) -> (usize, F) {
    let mut best = (0, F::infinity());
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn farthest_point_init<F: Scalar>(x: ArrayView2<F>, k: usize, seed: u64) -> Array2<F> {
    let n = x.nrows();
    let mut rng = rng::stream(seed, Stream::KMeans, 0);
    let first = rng.random_range(0..n);
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(first));
    let mut min_d: Vec<F> = x
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, x.row(first)))
        .collect();
    for c in 1..k {
        let mut pick = 0;
        for i in 1..n {
            if min_d[i] > min_d[pick] {
                pick = i;
            }
        }
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            min_d[i] = min_d[i].min(sq_dist(r, x.row(pick)));
        }
    }
    centroids
}

pub fn kmeans<F: Scalar>(
    x: ArrayView2<F>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult<F>> {
    let n = x.nrows();
    if k == 0 {
        return Err(PsaError::invalid("k must be >= 1"));
    }
    if k > n {
        return Err(PsaError::invalid(format!("k = {k} exceeds {n} rows")));
    }
    let mut centroids = farthest_point_init(x, k, seed);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();

    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut inertia = F::zero();
        let mut dist = vec![F::zero(); n];
        for (i, row) in x.rows().into_iter().enumerate() {
            let (c, d) = nearest(row, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dist[i] = d;
            inertia += d;
        }
        history.push(inertia);
        if !changed {
            break;
        }

        let mut sums = Array2::<F>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (row, &c) in x.rows().into_iter().zip(&assignments) {
            let mut s = sums.row_mut(c);
            s += &row;
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = F::one() / F::from_usize_lossy(counts[c]);
                centroids.row_mut(c).assign(&sums.row(c).mapv(|v| v * inv));
            } else {
                // re-seed from the point worst served by its current centroid
                let far = (0..n).filter(|&i| counts[assignments[i]] > 1).fold(
                    None,
                    |best: Option<usize>, i| match best {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    },
                );
                if let Some(i) = far {
                    centroids.row_mut(c).assign(&x.row(i));
                    counts[assignments[i]] -= 1;
                    dist[i] = F::zero();
                }
            }
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_history: history,
    })
}
