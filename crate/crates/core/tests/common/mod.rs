#![allow(dead_code)]

use latent_shrink::harness::{DatasetSpec, Mode, RunConfig};
use latent_shrink::metrics::MetricRecord;
use latent_shrink::numerics::Matrix;

/// Mean silhouette straight from the definition: every distance recomputed
/// for every point, no shared sums.
pub fn brute_force_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = points.len();
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort();
    clusters.dedup();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / own.len() as f64;
        let mut b = f64::INFINITY;
        for &c in clusters.iter().filter(|&&c| c != labels[i]) {
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            let mean = members.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / members.len() as f64;
            b = b.min(mean);
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Slope of the degree-1 least-squares fit through (0, y0), (1, y1), ...
/// solved from the 2×2 normal equations by Cramer's rule.
pub fn cramer_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        let x = i as f64;
        sx += x;
        sxx += x * x;
        sy += y;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// First evaluation epoch (multiple of `patience`, > 0) whose trailing
/// `window` values have strictly positive slope in all four curves.
pub fn scan_for_freeze(stream: &[MetricRecord], patience: usize, window: usize) -> Option<usize> {
    (1..stream.len()).filter(|e| e % patience == 0).find(|&e| {
        if e + 1 < window {
            return false;
        }
        let win = &stream[e + 1 - window..=e];
        let curves: [Vec<f64>; 4] = [
            win.iter().map(|r| r.recon_loss).collect(),
            win.iter().map(|r| r.silhouette).collect(),
            win.iter().map(|r| r.fid_recon).collect(),
            win.iter().map(|r| r.fid_gen).collect(),
        ];
        curves.iter().all(|c| cramer_slope(c) > 0.0)
    })
}

pub fn record(epoch: usize, silhouette: f64, recon: f64, fid_recon: f64, fid_gen: f64) -> MetricRecord {
    MetricRecord {
        epoch,
        latent_dim: 0,
        silhouette,
        fid_recon,
        fid_gen,
        recon_loss: recon,
        kl: 0.0,
        elbo: -recon,
    }
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

/// Blobs setting shared by the end-to-end checks.
pub fn blobs_config(mode: Mode) -> RunConfig {
    RunConfig {
        mode,
        dataset: DatasetSpec::Blobs {
            n_per_class: 250,
            k_classes: 4,
            d: 64,
            spread: 0.1,
            seed: 0,
        },
        hidden: 64,
        batch_size: 32,
        epochs: 60,
        ..Default::default()
    }
}
