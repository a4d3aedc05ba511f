mod common;

use common::{brute_force_silhouette, record, rows, scan_for_freeze};
use latent_shrink::controller::{replay, Action, ControllerConfig};
use latent_shrink::data::{encode_idx_images, encode_idx_labels, load_idx, stratified_split};
use latent_shrink::metrics::{frechet_distance, silhouette_score, MetricRecord};
use latent_shrink::model::{gaussian_kl, init_model, read_checkpoint, write_checkpoint, CheckpointHeader};
use latent_shrink::numerics::{Matrix, RngState};
use latent_shrink::pruning::{prune_latent, to_original_coordinates};
use proptest::prelude::*;

fn matrix_strategy(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

/// Points plus labels using at least two distinct clusters.
fn clustered_points() -> impl Strategy<Value = (Matrix, Vec<usize>)> {
    (4usize..=30, 2usize..=4, 2usize..=8).prop_flat_map(|(n, k, dim)| {
        (
            prop::collection::vec(-3.0f64..3.0, n * dim),
            prop::collection::vec(0..k, n).prop_filter("two clusters", |l| l.iter().any(|&x| x != l[0])),
        )
            .prop_map(move |(d, l)| (Matrix::new(n, dim, d).unwrap(), l))
    })
}

proptest! {
    #[test]
    fn silhouette_agrees_with_definition((pts, labels) in clustered_points()) {
        let fast = silhouette_score(&pts, &labels).unwrap();
        let slow = brute_force_silhouette(&rows(&pts), &labels);
        prop_assert!((fast - slow).abs() <= 1e-9, "{fast} vs {slow}");
        prop_assert!((-1.0..=1.0).contains(&fast));
    }

    #[test]
    fn frechet_is_a_symmetric_nonnegative_distance(
        a in matrix_strategy(3..30, 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let b = Matrix::new(a.rows() + 2, a.cols(), (0..(a.rows() + 2) * a.cols()).map(|_| rng.normal() * 2.0).collect()).unwrap();
        prop_assert!(frechet_distance(&a, &a).unwrap() <= 1e-8);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-10 * ab.max(1.0), "{ab} vs {ba}");
    }

    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-4.0f64..4.0, 1..8), lv_seed in any::<u64>()) {
        let mut rng = RngState::new(lv_seed);
        let logvar: Vec<f64> = mu.iter().map(|_| rng.uniform_range(-4.0, 4.0)).collect();
        prop_assert!(gaussian_kl(&mu, &logvar) >= 0.0);
        prop_assert_eq!(gaussian_kl(&vec![0.0; mu.len()], &vec![0.0; mu.len()]), 0.0);
    }

    #[test]
    fn pruned_decoder_equals_zero_filled_latent(
        seed in any::<u64>(),
        nz in 3usize..10,
        pick in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let params = init_model(7, 5, nz, &mut rng).unwrap();
        let mut pr = RngState::new(pick);
        let n = 1 + (pr.uniform() * (nz - 2) as f64) as usize % (nz - 2);
        let removed = rand::seq::index::sample(&mut pr, nz, n).into_vec();
        let (pruned, event) = prune_latent(params.clone(), &removed).unwrap();
        prop_assert_eq!(pruned.latent_dim(), nz - n);

        let short = Matrix::new(4, nz - n, (0..4 * (nz - n)).map(|_| rng.normal()).collect()).unwrap();
        let mut padded = Matrix::zeros(4, nz);
        for r in 0..4 {
            let mut src = short.row(r).iter();
            for c in (0..nz).filter(|c| !event.removed_indices.contains(c)) {
                padded.set(r, c, *src.next().unwrap());
            }
        }
        prop_assert_eq!(pruned.decode(&short).unwrap(), params.decode(&padded).unwrap());

        let x = Matrix::new(3, 7, (0..21).map(|_| rng.uniform()).collect()).unwrap();
        let (mu_a, lv_a) = params.encode(&x).unwrap();
        let (mu_b, lv_b) = pruned.encode(&x).unwrap();
        let keep: Vec<usize> = (0..nz).filter(|c| !event.removed_indices.contains(c)).collect();
        for r in 0..3 {
            for (j, &c) in keep.iter().enumerate() {
                prop_assert_eq!(mu_b.get(r, j).to_bits(), mu_a.get(r, c).to_bits());
                prop_assert_eq!(lv_b.get(r, j).to_bits(), lv_a.get(r, c).to_bits());
            }
        }
    }

    #[test]
    fn composed_prunes_equal_one_shot(seed in any::<u64>(), nz in 6usize..12) {
        let mut rng = RngState::new(seed);
        let params = init_model(5, 4, nz, &mut rng).unwrap();
        let first = rand::seq::index::sample(&mut rng, nz, 2).into_vec();
        let second = rand::seq::index::sample(&mut rng, nz - 2, 2).into_vec();
        let (once, _) = prune_latent(params.clone(), &first).unwrap();
        let (twice, _) = prune_latent(once, &second).unwrap();
        let mut all = first.clone();
        all.extend(to_original_coordinates(&first, &second));
        let (direct, _) = prune_latent(params, &all).unwrap();
        prop_assert_eq!(twice, direct);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), d in 2usize..9, h in 1usize..7, nz in 2usize..5, epoch in any::<u32>()) {
        let params = init_model(d, h, nz, &mut RngState::new(seed)).unwrap();
        let header = CheckpointHeader::for_model(&params, epoch as u64, seed);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &header, &params).unwrap();
        let (h2, p2) = read_checkpoint(buf.as_slice()).unwrap();
        prop_assert_eq!(h2, header);
        prop_assert_eq!(p2.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        params.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn idx_files_round_trip(bytes in prop::collection::vec(any::<u8>(), 12), labels in prop::collection::vec(0usize..10, 2)) {
        let x = Matrix::new(2, 6, bytes.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        std::fs::write(&ip, encode_idx_images(&x, 3, 2).unwrap()).unwrap();
        std::fs::write(&lp, encode_idx_labels(&labels).unwrap()).unwrap();
        let (x2, l2) = load_idx(&ip, &lp).unwrap();
        prop_assert_eq!(x2, x);
        prop_assert_eq!(l2, labels);
    }

    #[test]
    fn stratified_split_keeps_class_proportions(labels in prop::collection::vec(0usize..3, 10..80)) {
        prop_assume!((0..3).all(|c| labels.contains(&c)));
        let x = Matrix::zeros(labels.len(), 2);
        let s = stratified_split(&x, &labels, 3, 0.8).unwrap();
        for c in 0..3 {
            let total = labels.iter().filter(|&&l| l == c).count() as f64;
            let train = s.train_labels.iter().filter(|&&l| l == c).count() as f64;
            prop_assert!((train - 0.8 * total).abs() <= 1.0);
        }
        prop_assert_eq!(s.train_x.rows() + s.val_x.rows(), labels.len());
    }
}

/// Streams of small multiples of 1/64 so every affine map with a dyadic scale
/// and integer shift is exact in floating point.
fn dyadic_stream() -> impl Strategy<Value = Vec<MetricRecord>> {
    (30usize..90).prop_flat_map(|n| {
        prop::collection::vec((-8i32..=8, -8i32..=8, -8i32..=8, -8i32..=8), n).prop_map(|steps| {
            let mut level = [0i32; 4];
            steps
                .iter()
                .enumerate()
                .map(|(e, s)| {
                    level[0] += s.0;
                    level[1] += s.1;
                    level[2] += s.2;
                    level[3] += s.3;
                    let v = |i: usize| level[i] as f64 / 64.0;
                    record(e, v(0), v(1), v(2), v(3))
                })
                .collect()
        })
    })
}

fn small_config() -> impl Strategy<Value = ControllerConfig> {
    (1usize..7, 1usize..6, 2usize..12, 2usize..12).prop_map(|(patience, decrease, window, slowdown_window)| ControllerConfig {
        patience,
        decrease,
        window,
        slowdown_window,
    })
}

proptest! {
    #[test]
    fn freeze_matches_exhaustive_scan(stream in dyadic_stream(), cfg in small_config()) {
        let out = replay(&stream, cfg, 40).unwrap();
        prop_assert_eq!(out.stopping_epoch, scan_for_freeze(&stream, cfg.patience, cfg.window));
    }

    #[test]
    fn decisions_ignore_positive_affine_maps(
        stream in dyadic_stream(),
        cfg in small_config(),
        scales in prop::array::uniform4(-3i32..=3),
        shifts in prop::array::uniform4(-50i32..=50),
    ) {
        let map = |i: usize, v: f64| v * 2f64.powi(scales[i]) + shifts[i] as f64;
        let rescaled: Vec<MetricRecord> = stream
            .iter()
            .map(|r| record(r.epoch, map(0, r.silhouette), map(1, r.recon_loss), map(2, r.fid_recon), map(3, r.fid_gen)))
            .collect();
        let a = replay(&stream, cfg, 30).unwrap();
        let b = replay(&rescaled, cfg, 30).unwrap();
        prop_assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn schedule_only_moves_one_way(stream in dyadic_stream(), cfg in small_config(), init in 2usize..50) {
        let out = replay(&stream, cfg, init).unwrap();
        let mut nz = init;
        let mut frozen = false;
        for (epoch, action) in &out.trace {
            match action {
                Action::Prune(n) => {
                    prop_assert!(!frozen);
                    prop_assert!(*epoch > 0 && epoch % cfg.patience == 0);
                    prop_assert!(*n >= 1 && nz - n >= 2);
                    nz -= n;
                }
                Action::Freeze => {
                    prop_assert!(!frozen);
                    frozen = true;
                }
                Action::Continue => {}
            }
        }
        prop_assert_eq!(nz, out.final_latent_dim);
        let decreases: Vec<usize> = out.state.decisions().iter().map(|d| d.latent_decrease).collect();
        prop_assert!(decreases.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(decreases.iter().all(|&d| d == cfg.decrease || d == 1));
    }
}

/// Epoch at which a controller that never freezes and never slows down
/// reaches `target`, from the arithmetic of the schedule.
fn closed_form_arrival(init: usize, target: usize, patience: usize, decrease: usize) -> usize {
    patience * (init - target).div_ceil(decrease)
}

#[test]
fn traversal_time_matches_closed_form() {
    for (init, patience, decrease) in [(40, 5, 5), (23, 3, 4), (64, 5, 5), (10, 2, 3)] {
        let n = closed_form_arrival(init, 2, patience, decrease) + 3 * patience;
        let falling: Vec<MetricRecord> = (0..n)
            .map(|e| {
                let e = e as f64;
                record(e as usize, 1.0 - e / 1024.0, 900.0 - e, 500.0 - e, 400.0 - e)
            })
            .collect();
        let cfg = ControllerConfig {
            patience,
            decrease,
            window: 4,
            slowdown_window: 4,
        };
        let out = replay(&falling, cfg, init).unwrap();
        let arrival = out
            .state
            .prune_log()
            .iter()
            .find(|ev| ev.new_nz == 2)
            .map(|ev| ev.epoch)
            .unwrap();
        assert_eq!(arrival, closed_form_arrival(init, 2, patience, decrease), "init {init}");
        assert_eq!(out.final_latent_dim, 2);
        assert_eq!(out.stopping_epoch, None);
    }
}

#[test]
fn slowdown_switches_to_single_steps() {
    // Silhouette falls for 30 epochs, then rises; everything else improves.
    let stream: Vec<MetricRecord> = (0..80)
        .map(|e| {
            let s = if e < 30 { -(e as f64) } else { e as f64 - 60.0 };
            record(e, s, 900.0 - e as f64, 500.0 - e as f64, 400.0 - e as f64)
        })
        .collect();
    let cfg = ControllerConfig::default();
    let out = replay(&stream, cfg, 60).unwrap();
    let prunes: Vec<(usize, usize)> = out
        .trace
        .iter()
        .filter_map(|(e, a)| match a {
            Action::Prune(n) => Some((*e, *n)),
            _ => None,
        })
        .collect();
    // The 10-epoch silhouette slope first turns positive at epoch 35
    // (window 26..=35 has a minimum at 30 and ends higher than it starts).
    let first_single = prunes.iter().find(|p| p.1 == 1).unwrap().0;
    let oracle = (1..80)
        .filter(|e| e % 5 == 0 && *e >= 9)
        .find(|&e| common::cramer_slope(&stream[e - 9..=e].iter().map(|r| r.silhouette).collect::<Vec<_>>()) > 0.0)
        .unwrap();
    assert_eq!(first_single, oracle);
    assert!(prunes.iter().take_while(|p| p.0 < oracle).all(|p| p.1 == 5));
    assert!(prunes.iter().skip_while(|p| p.0 < oracle).all(|p| p.1 == 1));
}

#[test]
fn paper_shaped_stream_freezes_after_the_minima() {
    // FIDs and reconstruction loss bottom out at epoch 50; silhouette dips
    // and recovers from epoch 40.
    let stream: Vec<MetricRecord> = (0..150)
        .map(|e| {
            let t = e as f64;
            let u = (t - 50.0).powi(2);
            record(e, 0.001 * (t - 40.0).powi(2), 100.0 + 0.01 * u, 20.0 + 0.02 * u, 30.0 + 0.015 * u)
        })
        .collect();
    let out = replay(&stream, ControllerConfig::default(), 64).unwrap();
    let stop = out.stopping_epoch.expect("freezes");
    assert!(stop > 50, "stopped at {stop}");
    assert_eq!(Some(stop), scan_for_freeze(&stream, 5, 20));
}

#[test]
fn u_shaped_window_slope_matches_closed_form() {
    // y = (x - c)^2 on x = 0..w-1 has least-squares slope (w - 1) - 2c.
    let w = 20;
    for c in [3.0, 9.5, 12.0, 17.0] {
        let ys: Vec<f64> = (0..w).map(|x| (x as f64 - c).powi(2)).collect();
        let slope = latent_shrink::numerics::least_squares_slope(&ys).unwrap();
        let expected = (w as f64 - 1.0) - 2.0 * c;
        assert!((slope - expected).abs() < 1e-9, "{slope} vs {expected}");
    }
}
