mod common;

use c2fnet::metrics::{
    adaptive_threshold, binarize, e_measure_adaptive, evaluate_dataset, f_measure_adaptive, mae, s_measure, weighted_f_measure, MaskPair, Measures,
};
use common::oracle::{self, grid};
use common::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const ORACLE_TOL: f64 = 1e-9;

fn pair(h: usize, w: usize, pred: &[f64], gt: &[f64]) -> MaskPair {
    MaskPair::new(h, w, pred.to_vec(), gt).unwrap()
}

/// Random 8×8 pair; a few draws are quantized, blob-shaped, empty or full.
fn random_pair(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let kind = r.random_range(0..10);
    let density = r.random_range(0.05..0.95);
    let gt: Vec<f64> = match kind {
        0 => vec![0.0; 64],
        1 => vec![1.0; 64],
        2 => {
            let (cy, cx, rad) = (r.random_range(0.0..8.0), r.random_range(0.0..8.0), r.random_range(1.0..4.0));
            (0..64).map(|i| f64::from(u8::from(((i / 8) as f64 - cy).hypot((i % 8) as f64 - cx) < rad))).collect()
        }
        _ => (0..64).map(|_| f64::from(u8::from(r.random_bool(density)))).collect(),
    };
    let pred: Vec<f64> = match kind {
        3 => (0..64).map(|_| f64::from(r.random_range(0..=255u8)) / 255.0).collect(),
        4 => gt.iter().map(|&g| g * 0.7 + r.random_range(0.0..0.3)).collect(),
        5 => vec![0.0; 64],
        _ => (0..64).map(|_| r.random_range(0.0..1.0)).collect(),
    };
    (pred, gt)
}

#[test]
fn measures_match_transcription_on_random_pairs() {
    let mut r = rng(2024);
    for k in 0..200 {
        let (p, g) = random_pair(&mut r);
        let mp = pair(8, 8, &p, &g);
        let (pg, gg) = (grid(8, 8, &p), grid(8, 8, &g));
        let checks = [
            ("MAE", mae(&mp), oracle::mae(&pg, &gg)),
            ("S", s_measure(&mp), oracle::s_measure(&pg, &gg)),
            ("F", f_measure_adaptive(&mp), oracle::f_adaptive(&pg, &gg)),
            ("Fw", weighted_f_measure(&mp).value, oracle::weighted_f(&pg, &gg)),
            ("E", e_measure_adaptive(&mp), oracle::e_adaptive(&pg, &gg)),
        ];
        for (name, got, want) in checks {
            assert!((got - want).abs() < ORACLE_TOL, "pair {k}: {name} {got} vs {want}");
            assert!((0.0..=1.0).contains(&got), "pair {k}: {name} = {got}");
        }
    }
}

#[test]
fn distance_transform_matches_brute_force() {
    let mut r = rng(5);
    for _ in 0..100 {
        let (h, w) = (r.random_range(1..=9), r.random_range(1..=9));
        let g: Vec<f64> = (0..h * w).map(|_| f64::from(u8::from(r.random_bool(0.2)))).collect();
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let fg: Vec<bool> = g.iter().map(|&v| v == 1.0).collect();
        let (d, idx) = c2fnet::metrics::distance_transform(&fg, h, w);
        let want = oracle::nearest_fg(&grid(h, w, &g));
        for i in 0..h * w {
            let (dd, r2, c2) = want[i / w][i % w];
            assert!((d[i] - dd).abs() < 1e-12);
            assert_eq!(idx[i], r2 * w + c2);
        }
    }
}

#[test]
fn gaussian_kernel_matches_closed_form() {
    let k = c2fnet::metrics::gaussian_kernel(7, 5.0);
    let want = oracle::gauss7();
    for (a, b) in k.iter().zip(want.iter().flatten()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn mae_hand_cases() {
    assert_eq!(mae(&pair(2, 2, &[1.0, 0.0, 0.0, 0.0], &[1.0, 1.0, 0.0, 0.0])), 0.25);
    let g = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    assert_eq!(mae(&pair(2, 3, &g, &g)), 0.0);
    let inv: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
    assert_eq!(mae(&pair(2, 3, &inv, &g)), 1.0);
}

#[test]
fn adaptive_f_hand_case() {
    let p = pair(2, 2, &[0.8, 0.6, 0.1, 0.0], &[1.0, 1.0, 0.0, 0.0]);
    assert!((adaptive_threshold(&p.pred) - 0.75).abs() < 1e-15);
    assert_eq!(binarize(&p.pred), vec![true, false, false, false]);
    assert!((f_measure_adaptive(&p) - 0.8125).abs() < 1e-7);
    assert_eq!(f_measure_adaptive(&pair(2, 2, &[0.0; 4], &[1.0, 0.0, 0.0, 1.0])), 0.0);
}

#[test]
fn perfect_prediction_scores_one() {
    let mut r = rng(6);
    for _ in 0..20 {
        let g: Vec<f64> = (0..64).map(|_| f64::from(u8::from(r.random_bool(0.4)))).collect();
        if g.iter().all(|&v| v == 0.0) || g.iter().all(|&v| v == 1.0) {
            continue;
        }
        let m = Measures::of(&pair(8, 8, &g, &g));
        assert_eq!(m.mae, 0.0);
        // every ratio carries a 1e-8 guard, so "1" means 1 - O(1e-8)
        for v in [m.s, m.f, m.fw, m.e] {
            assert!((v - 1.0).abs() < 1e-7, "{m:?}");
        }
    }
}

#[test]
fn degenerate_masks() {
    let p = [0.2, 0.4, 0.0, 0.2];
    assert!((s_measure(&pair(2, 2, &p, &[0.0; 4])) - 0.8).abs() < 1e-15);
    assert!((s_measure(&pair(2, 2, &p, &[1.0; 4])) - 0.2).abs() < 1e-15);
    let fw = weighted_f_measure(&pair(2, 2, &p, &[0.0; 4]));
    assert!(fw.degenerate && fw.value == 0.0);
    // an all-zero map scores 0 once the smoothing window stays inside the image
    let g: Vec<f64> = (0..144).map(|i| f64::from(u8::from((4..8).contains(&(i / 12)) && (4..8).contains(&(i % 12))))).collect();
    assert!(weighted_f_measure(&pair(12, 12, &[0.0; 144], &g)).value < 1e-12);
    // threshold 2·0.5 = 1 picks the first two cells
    let p = [1.0, 1.0, 0.0, 0.0];
    assert_eq!(e_measure_adaptive(&pair(2, 2, &p, &[0.0; 4])), 0.5);
    assert_eq!(e_measure_adaptive(&pair(2, 2, &p, &[1.0; 4])), 0.5);
}

#[test]
fn e_measure_hand_cases() {
    let g = [1.0, 0.0, 0.0, 1.0];
    assert!((e_measure_adaptive(&pair(2, 2, &g, &g)) - 1.0).abs() < 1e-7);
    let e = e_measure_adaptive(&pair(2, 2, &[0.0, 1.0, 1.0, 0.0], &g));
    assert!(e < 1e-12, "{e}");
}

#[test]
fn mae_symmetries() {
    let mut r = rng(7);
    for _ in 0..50 {
        let (p, g) = random_pair(&mut r);
        let base = mae(&pair(8, 8, &p, &g));
        let (pi, gi): (Vec<f64>, Vec<f64>) = p.iter().zip(&g).map(|(a, b)| (1.0 - a, 1.0 - b)).unzip();
        assert!((mae(&pair(8, 8, &pi, &gi)) - base).abs() < 1e-14);
        let perm: Vec<usize> = (0..64).map(|i| (i * 37 + 11) % 64).collect();
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let gp: Vec<f64> = perm.iter().map(|&i| g[i]).collect();
        assert!((mae(&pair(8, 8, &pp, &gp)) - base).abs() < 1e-14);
        let k = r.random_range(0..64);
        let mut moved = p.clone();
        moved[k] += (g[k] - p[k]) * r.random_range(0.0..=1.0);
        assert!(mae(&pair(8, 8, &moved, &g)) <= base);
    }
}

#[test]
fn f_is_one_exactly_when_binarization_reproduces_gt() {
    let mut r = rng(8);
    for _ in 0..200 {
        let (p, g) = random_pair(&mut r);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let mp = pair(8, 8, &p, &g);
        let exact = binarize(&mp.pred) == mp.gt;
        assert_eq!((f_measure_adaptive(&mp) - 1.0).abs() < 1e-7, exact);
    }
}

#[test]
fn dataset_means_ignore_order() {
    let mut r = rng(9);
    let pairs: Vec<(String, MaskPair)> = (0..12)
        .map(|i| {
            let (p, g) = random_pair(&mut r);
            (format!("s{i}"), pair(8, 8, &p, &g))
        })
        .collect();
    let a = evaluate_dataset(&pairs).unwrap();
    let mut shuffled = pairs.clone();
    shuffled.reverse();
    shuffled.swap(0, 5);
    let b = evaluate_dataset(&shuffled).unwrap();
    assert_eq!(a.mean, b.mean);
    let mean_s: f64 = a.samples.iter().map(|s| s.measures.s).sum::<f64>() / 12.0;
    assert!((a.mean.s - mean_s).abs() < 1e-14);
    assert_eq!(a.count(), 12);
}
