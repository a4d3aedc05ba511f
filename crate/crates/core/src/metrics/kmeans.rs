use crate::numerics::{Matrix, RngState};
use crate::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const MOVEMENT_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    pub k: usize,
    /// Set when some cluster ended up with no members.
    pub degenerate: bool,
    /// Within-cluster sum of squared distances after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.k];
        self.labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centre uniform, the rest drawn with probability
/// proportional to squared distance from the nearest chosen centre.
fn seed_centroids(points: &Matrix, k: usize, rng: &mut RngState) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push((rng.uniform() * n as f64) as usize % n);
    let mut nearest: Vec<f64> = points.row_iter().map(|p| sq_dist(p, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.unwrap()
        } else {
            // every point coincides with a centre already
            (rng.uniform() * n as f64) as usize % n
        };
        chosen.push(next);
        for (d, p) in nearest.iter_mut().zip(points.row_iter()) {
            *d = d.min(sq_dist(p, points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

/// Lloyd's algorithm from a k-means++ start; stops after 100 iterations or
/// when no centroid moves more than 1e-6.
pub fn kmeans(points: &Matrix, k: usize, rng: &mut RngState) -> Result<ClusterAssignment> {
    let (n, dim) = points.shape();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("kmeans needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "kmeans with k={k} needs at least {k} points, got {n}"
        )));
    }
    let mut centroids = seed_centroids(points, k, rng);
    let mut labels = vec![0usize; n];
    let mut inertia_history = Vec::new();
    let mut empty = false;

    for _ in 0..MAX_ITERATIONS {
        let mut inertia = 0.0;
        for (i, p) in points.row_iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(p, centroids.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            labels[i] = best;
            inertia += best_d;
        }
        inertia_history.push(inertia);

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (p, &l) in points.row_iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(p) {
                *s += v;
            }
        }
        empty = counts.contains(&0);
        let mut movement = 0.0f64;
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let inv = 1.0 / count as f64;
            let mut moved = 0.0;
            for (old, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                let new = s * inv;
                moved += (new - *old) * (new - *old);
                *old = new;
            }
            movement = movement.max(moved.sqrt());
        }
        if movement < MOVEMENT_TOL {
            break;
        }
    }

    // Labels always refer to the final centroids.
    let mut inertia = 0.0;
    for (i, p) in points.row_iter().enumerate() {
        let (best, d) = (0..k)
            .map(|c| (c, sq_dist(p, centroids.row(c))))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        labels[i] = best;
        inertia += d;
    }
    inertia_history.push(inertia);

    let mut result = ClusterAssignment {
        labels,
        centroids,
        k,
        degenerate: empty,
        inertia_history,
    };
    result.degenerate |= result.distinct_labels() < k;
    Ok(result)
}
