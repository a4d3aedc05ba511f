use crate::numerics::Matrix;
use crate::{Error, Result};

/// Mean silhouette coefficient under Euclidean distance.
///
/// For each point `a` is its mean distance to the other members of its own
/// cluster and `b` the smallest mean distance to the members of another
/// cluster; `s = (b - a) / max(a, b)`. Members of singleton clusters score 0.
/// Labels may be arbitrary ids; only equality matters.
pub fn silhouette_score(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::SingleCluster);
    }
    let cluster_of: Vec<usize> = labels.iter().map(|l| ids.binary_search(l).unwrap()).collect();
    let k = ids.len();
    let mut sizes = vec![0usize; k];
    cluster_of.iter().for_each(|&c| sizes[c] += 1);

    // dist_sums[i * k + c] = Σ_{j in cluster c} d(i, j), filled one pair at a time
    let mut dist_sums = vec![0.0; n * k];
    for i in 0..n {
        let pi = points.row(i);
        for j in (i + 1)..n {
            let d = pi
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist_sums[i * k + cluster_of[j]] += d;
            dist_sums[j * k + cluster_of[i]] += d;
        }
    }

    let mut total = 0.0;
    for i in 0..n {
        let own = cluster_of[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = dist_sums[i * k + own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| dist_sums[i * k + c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pairs_far_apart() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]).unwrap();
        let s = silhouette_score(&pts, &[0, 0, 1, 1]).unwrap();
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        let want = (b - 1.0) / b;
        assert!((s - want).abs() < 1e-12);
        assert!((s - 0.9003).abs() < 1e-4);
    }

    #[test]
    fn equal_a_and_b_scores_zero() {
        // Middle point is equidistant from both clusters' members.
        let pts = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        // point 1 in cluster A with point 0: a = 1; b = 1 (point 2) -> s = 0
        // points 0 and 2: s_0 = (2 - 1)/2, s_2 singleton = 0
        let s = silhouette_score(&pts, &[7, 7, 9]).unwrap();
        assert!((s - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_cluster_is_an_error() {
        let pts = Matrix::zeros(3, 2);
        assert!(matches!(silhouette_score(&pts, &[1, 1, 1]), Err(Error::SingleCluster)));
        assert!(silhouette_score(&pts, &[0, 1]).is_err());
    }

    #[test]
    fn coincident_points_do_not_divide_by_zero() {
        let pts = Matrix::zeros(4, 2);
        assert_eq!(silhouette_score(&pts, &[0, 0, 1, 1]).unwrap(), 0.0);
    }
}
