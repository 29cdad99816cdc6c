mod common;

use c2fnet::loss::{pixel_weights, pixel_weights_with, total_loss, weighted_bce, weighted_iou, WEIGHT_LAMBDA, WEIGHT_WINDOW};
use c2fnet::{Graph, Tensor};
use common::oracle::{self, grid};
use common::{binary_mask, rng, uniform};
use rand::Rng;

fn planes(t: &Tensor) -> Vec<oracle::Grid> {
    let s = t.shape();
    t.data().chunks(s.plane()).map(|p| grid(s.h, s.w, p)).collect()
}

fn naive(f: fn(&oracle::Grid, &oracle::Grid, &oracle::Grid) -> f64, z: &Tensor, g: &Tensor, w: &Tensor) -> f64 {
    let (z, g, w) = (planes(z), planes(g), planes(w));
    z.iter().zip(&g).zip(&w).map(|((z, g), w)| f(z, g, w)).sum::<f64>() / z.len() as f64
}

#[test]
fn losses_match_naive_loops() {
    let mut r = rng(0);
    for _ in 0..200 {
        let (n, h, w) = (r.random_range(1..=3), r.random_range(1..=8), r.random_range(1..=8));
        let z = uniform(&mut r, [n, 1, h, w], -8.0, 8.0);
        let p = r.random_range(0.0..1.0);
        let g = binary_mask(&mut r, [n, 1, h, w], p);
        let wt = if r.random_bool(0.5) { pixel_weights(&g).unwrap() } else { uniform(&mut r, [n, 1, h, w], 1.0, 6.0) };
        let bce = weighted_bce(&z, &g, &wt).unwrap();
        let iou = weighted_iou(&z, &g, &wt).unwrap();
        assert!((bce - naive(oracle::bce, &z, &g, &wt)).abs() < 1e-12);
        assert!((iou - naive(oracle::iou, &z, &g, &wt)).abs() < 1e-12);
    }
}

#[test]
fn pixel_weights_match_naive_window() {
    let mut r = rng(1);
    for _ in 0..50 {
        let (h, w) = (r.random_range(1..=20), r.random_range(1..=20));
        let g = binary_mask(&mut r, [1, 1, h, w], 0.4);
        let got = pixel_weights(&g).unwrap();
        let want = oracle::pixel_weights(&planes(&g)[0], WEIGHT_WINDOW, WEIGHT_LAMBDA);
        for (a, b) in got.data().iter().zip(want.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
            assert!((1.0..=6.0).contains(a));
        }
    }
}

#[test]
fn pixel_weight_hand_cases() {
    assert!(pixel_weights(&Tensor::zeros([1, 1, 9, 9])).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(pixel_weights(&Tensor::ones([1, 1, 9, 9])).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Tensor::zeros([1, 1, 7, 7]);
    g.set(0, 0, 3, 3, 1.0);
    let w = pixel_weights_with(&g, 3, 5.0).unwrap();
    // the λ-term is 5·(1 − 1/9) = 40/9, so the weight itself is 49/9
    assert!((w.at(0, 0, 3, 3) - 1.0 - 40.0 / 9.0).abs() < 1e-12);
    assert!((w.at(0, 0, 3, 3) - 49.0 / 9.0).abs() < 1e-12);

    assert!(pixel_weights(&Tensor::full([1, 1, 3, 3], 0.5)).is_err());
    assert!(pixel_weights_with(&g, 4, 5.0).is_err());
}

#[test]
fn bce_hand_cases() {
    let mut r = rng(2);
    let g = binary_mask(&mut r, [2, 1, 5, 6], 0.5);
    let ones = Tensor::ones([2, 1, 5, 6]);
    let b = weighted_bce(&Tensor::zeros([2, 1, 5, 6]), &g, &ones).unwrap();
    assert!((b - std::f64::consts::LN_2).abs() < 1e-12);

    let sat = g.map(|v| if v == 1.0 { 40.0 } else { -40.0 });
    assert!(weighted_bce(&sat, &g, &pixel_weights(&g).unwrap()).unwrap() < 1e-10);
    assert!(weighted_iou(&sat, &g, &ones).unwrap() < 1e-10);
    assert!(weighted_bce(&sat, &g, &Tensor::ones([2, 1, 5, 5])).is_err());
}

#[test]
fn iou_of_inverted_prediction() {
    let g = Tensor::from_fn([1, 1, 4, 4], |_, _, i, _| if i < 2 { 1.0 } else { 0.0 });
    let z = g.map(|v| if v == 1.0 { -40.0 } else { 40.0 });
    let l = weighted_iou(&z, &g, &Tensor::ones([1, 1, 4, 4])).unwrap();
    assert!((l - (1.0 - 1.0 / 17.0)).abs() < 1e-12, "{l}");
}

#[test]
fn losses_stay_finite_for_huge_logits() {
    let mut r = rng(3);
    let g = binary_mask(&mut r, [1, 1, 8, 8], 0.5);
    let w = pixel_weights(&g).unwrap();
    for z in [1e4, -1e4] {
        let zt = uniform(&mut r, [1, 1, 8, 8], -1.0, 1.0).map(|v| v.signum() * z);
        let (b, i) = (weighted_bce(&zt, &g, &w).unwrap(), weighted_iou(&zt, &g, &w).unwrap());
        assert!(b.is_finite() && i.is_finite() && (0.0..1.0).contains(&i));
    }
}

#[test]
fn total_loss_hand_cases() {
    let mut r = rng(4);
    let g = binary_mask(&mut r, [1, 1, 8, 8], 0.4);
    let sat = g.map(|v| if v == 1.0 { 40.0 } else { -40.0 });
    let mut graph = Graph::new();
    let (c, f) = (graph.leaf(sat.clone()), graph.leaf(sat));
    let (v, parts) = total_loss(&mut graph, c, f, &g).unwrap();
    assert!(parts.total < 1e-9);
    assert_eq!(graph.value(v).item(), parts.total);

    let empty = Tensor::zeros([1, 1, 8, 8]);
    let zero = Tensor::zeros([1, 1, 8, 8]);
    let mut graph = Graph::new();
    let (c, f) = (graph.leaf(zero.clone()), graph.leaf(zero.clone()));
    let (_, parts) = total_loss(&mut graph, c, f, &empty).unwrap();
    let ones = Tensor::ones([1, 1, 8, 8]);
    let want = 2.0 * (naive(oracle::bce, &zero, &empty, &ones) + naive(oracle::iou, &zero, &empty, &ones));
    assert!((parts.total - want).abs() < 1e-12);
    assert!((parts.coarse.bce - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((parts.total - parts.coarse.total() - parts.fine.total()).abs() < 1e-15);
}

#[test]
fn moving_one_pixel_toward_the_target_lowers_both_terms() {
    let mut r = rng(5);
    for _ in 0..50 {
        let g = binary_mask(&mut r, [1, 1, 6, 6], 0.5);
        let w = pixel_weights(&g).unwrap();
        let mut z = uniform(&mut r, [1, 1, 6, 6], -4.0, 4.0);
        let k = r.random_range(0..36);
        let (i, j) = (k / 6, k % 6);
        let toward = if g.at(0, 0, i, j) == 1.0 { 0.5 } else { -0.5 };
        let (b0, i0) = (weighted_bce(&z, &g, &w).unwrap(), weighted_iou(&z, &g, &w).unwrap());
        z.set(0, 0, i, j, z.at(0, 0, i, j) + toward);
        assert!(weighted_bce(&z, &g, &w).unwrap() < b0);
        assert!(weighted_iou(&z, &g, &w).unwrap() < i0);
    }
}

#[test]
fn unit_weight_losses_ignore_pixel_order() {
    let mut r = rng(6);
    let z = uniform(&mut r, [1, 1, 4, 4], -3.0, 3.0);
    let g = binary_mask(&mut r, [1, 1, 4, 4], 0.5);
    let ones = Tensor::ones([1, 1, 4, 4]);
    let perm: Vec<usize> = (0..16).map(|i| (i * 7 + 3) % 16).collect();
    let shuffle = |t: &Tensor| Tensor::from_vec([1, 1, 4, 4], perm.iter().map(|&p| t.data()[p]).collect()).unwrap();
    let (zs, gs) = (shuffle(&z), shuffle(&g));
    assert!((weighted_bce(&z, &g, &ones).unwrap() - weighted_bce(&zs, &gs, &ones).unwrap()).abs() < 1e-14);
    assert!((weighted_iou(&z, &g, &ones).unwrap() - weighted_iou(&zs, &gs, &ones).unwrap()).abs() < 1e-14);
}
