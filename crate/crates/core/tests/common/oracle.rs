//! Reference metrics and losses written as plain 2-D loops over `Vec<Vec<_>>`
//! grids. Slow on purpose.

pub type Grid = Vec<Vec<f64>>;

const EPS: f64 = 1e-8;

pub fn grid(h: usize, w: usize, flat: &[f64]) -> Grid {
    (0..h).map(|r| flat[r * w..(r + 1) * w].to_vec()).collect()
}

fn dims(g: &Grid) -> (usize, usize) {
    (g.len(), g[0].len())
}

fn avg(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn mae(p: &Grid, g: &Grid) -> f64 {
    let (h, w) = dims(p);
    let mut s = 0.0;
    for r in 0..h {
        for c in 0..w {
            s += (p[r][c] - g[r][c]).abs();
        }
    }
    s / (h * w) as f64
}

fn threshold_map(p: &Grid) -> Vec<Vec<bool>> {
    let (h, w) = dims(p);
    let mean = p.iter().flatten().sum::<f64>() / (h * w) as f64;
    let t = f64::min(2.0 * mean, 1.0);
    p.iter().map(|row| row.iter().map(|&v| t > 0.0 && v >= t).collect()).collect()
}

pub fn f_adaptive(p: &Grid, g: &Grid) -> f64 {
    let b = threshold_map(p);
    let (h, w) = dims(p);
    let (mut tp, mut sel, mut pos) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let gt = g[r][c] == 1.0;
            if b[r][c] {
                sel += 1.0;
            }
            if gt {
                pos += 1.0;
            }
            if b[r][c] && gt {
                tp += 1.0;
            }
        }
    }
    let prec = tp / (sel + EPS);
    let rec = tp / (pos + EPS);
    1.3 * prec * rec / (0.3 * prec + rec + EPS)
}

pub fn e_adaptive(p: &Grid, g: &Grid) -> f64 {
    let b = threshold_map(p);
    let (h, w) = dims(p);
    let n = (h * w) as f64;
    let bf: Grid = b.iter().map(|row| row.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect()).collect();
    let fg: f64 = g.iter().flatten().sum();
    if fg == 0.0 {
        return bf.iter().flatten().map(|v| 1.0 - v).sum::<f64>() / n;
    }
    if fg == n {
        return bf.iter().flatten().sum::<f64>() / n;
    }
    let mb = bf.iter().flatten().sum::<f64>() / n;
    let mg = fg / n;
    let mut acc = 0.0;
    for r in 0..h {
        for c in 0..w {
            let a = bf[r][c] - mb;
            let q = g[r][c] - mg;
            let align = 2.0 * a * q / (a * a + q * q + EPS);
            acc += ((align + 1.0) / 2.0).powi(2);
        }
    }
    acc / n
}

fn object(vals: &[f64]) -> f64 {
    let m = avg(vals);
    let sd = if vals.len() > 1 { (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt() } else { 0.0 };
    2.0 * m / (m * m + 1.0 + sd + EPS)
}

fn block_ssim(p: &Grid, g: &Grid, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
    let mut ps = Vec::new();
    let mut gs = Vec::new();
    for r in rows {
        for c in cols.clone() {
            ps.push(p[r][c]);
            gs.push(g[r][c]);
        }
    }
    let n = ps.len() as f64;
    let (mx, my) = (avg(&ps), avg(&gs));
    let d = if n > 1.0 { n - 1.0 } else { 1.0 };
    let vx = ps.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / d;
    let vy = gs.iter().map(|v| (v - my).powi(2)).sum::<f64>() / d;
    let cxy = ps.iter().zip(&gs).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / d;
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_measure(p: &Grid, g: &Grid) -> f64 {
    let (h, w) = dims(p);
    let fg_frac = g.iter().flatten().sum::<f64>() / (h * w) as f64;
    let pm = p.iter().flatten().sum::<f64>() / (h * w) as f64;
    if fg_frac == 0.0 {
        return 1.0 - pm;
    }
    if fg_frac == 1.0 {
        return pm;
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let (mut sr, mut sc, mut k) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if g[r][c] == 1.0 {
                fg.push(p[r][c]);
                sr += r as f64;
                sc += c as f64;
                k += 1.0;
            } else {
                bg.push(1.0 - p[r][c]);
            }
        }
    }
    let so = fg_frac * object(&fg) + (1.0 - fg_frac) * object(&bg);
    let x = ((sc / k).round_ties_even() as usize + 1).min(w);
    let y = ((sr / k).round_ties_even() as usize + 1).min(h);
    let area = (h * w) as f64;
    let mut sreg = 0.0;
    for (rows, cols) in [(0..y, 0..x), (0..y, x..w), (y..h, 0..x), (y..h, x..w)] {
        let n = rows.len() * cols.len();
        if n > 0 {
            sreg += n as f64 / area * block_ssim(p, g, rows, cols);
        }
    }
    (0.5 * so + 0.5 * sreg).max(0.0)
}

/// Brute-force nearest foreground pixel; ties go to the smallest column,
/// then the smallest row.
pub fn nearest_fg(g: &Grid) -> Vec<Vec<(f64, usize, usize)>> {
    let (h, w) = dims(g);
    let mut out = vec![vec![(f64::INFINITY, 0, 0); w]; h];
    for r in 0..h {
        for c in 0..w {
            let mut best = (usize::MAX, 0, 0);
            for c2 in 0..w {
                for r2 in 0..h {
                    if g[r2][c2] == 1.0 {
                        let d2 = (r as isize - r2 as isize).pow(2) as usize + (c as isize - c2 as isize).pow(2) as usize;
                        if d2 < best.0 {
                            best = (d2, r2, c2);
                        }
                    }
                }
            }
            out[r][c] = ((best.0 as f64).sqrt(), best.1, best.2);
        }
    }
    out
}

/// 7×7 Gaussian with σ = 5, normalized to unit sum.
pub fn gauss7() -> Grid {
    let mut k = vec![vec![0.0; 7]; 7];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / 50.0).exp();
            total += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    k
}

pub fn weighted_f(p: &Grid, g: &Grid) -> f64 {
    let (h, w) = dims(p);
    if g.iter().flatten().all(|&v| v == 0.0) {
        return 0.0;
    }
    let mut e = vec![vec![0.0; w]; h];
    for r in 0..h {
        for c in 0..w {
            e[r][c] = (p[r][c] - g[r][c]).abs();
        }
    }
    let near = nearest_fg(g);
    let mut et = e.clone();
    for r in 0..h {
        for c in 0..w {
            if g[r][c] == 0.0 {
                let (_, r2, c2) = near[r][c];
                et[r][c] = e[r2][c2];
            }
        }
    }
    let k = gauss7();
    let mut ea = vec![vec![0.0; w]; h];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for i in 0..7 {
                for j in 0..7 {
                    let (rr, cc) = (r as isize + i as isize - 3, c as isize + j as isize - 3);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        s += k[i][j] * et[rr as usize][cc as usize];
                    }
                }
            }
            ea[r][c] = s;
        }
    }
    let (mut nfg, mut efg, mut ebg) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if g[r][c] == 1.0 {
                nfg += 1.0;
                efg += ea[r][c].min(e[r][c]);
            } else {
                let b = 2.0 - (0.5f64.ln() / 5.0 * near[r][c].0).exp();
                ebg += b * e[r][c];
            }
        }
    }
    let tp = nfg - efg;
    let r = 1.0 - efg / nfg;
    let pr = tp / (tp + ebg + EPS);
    2.0 * r * pr / (r + pr + EPS)
}

/// `1 + λ·|box_mean(G) − G|` with a `k×k` window clipped to the image.
pub fn pixel_weights(g: &Grid, k: usize, lambda: f64) -> Grid {
    let (h, w) = dims(g);
    let r = (k / 2) as isize;
    let mut out = vec![vec![0.0; w]; h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut s, mut n) = (0.0, 0.0);
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                        s += g[yy as usize][xx as usize];
                        n += 1.0;
                    }
                }
            }
            out[y as usize][x as usize] = 1.0 + lambda * (s / n - g[y as usize][x as usize]).abs();
        }
    }
    out
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Weighted BCE of one image, using `ln σ` directly.
pub fn bce(z: &Grid, g: &Grid, wt: &Grid) -> f64 {
    let (h, w) = dims(z);
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let p = sig(z[r][c]);
            let l = -(g[r][c] * p.ln() + (1.0 - g[r][c]) * (1.0 - p).ln());
            num += wt[r][c] * l;
            den += wt[r][c];
        }
    }
    num / den
}

pub fn iou(z: &Grid, g: &Grid, wt: &Grid) -> f64 {
    let (h, w) = dims(z);
    let (mut inter, mut union) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let p = sig(z[r][c]);
            inter += wt[r][c] * p * g[r][c];
            union += wt[r][c] * (p + g[r][c] - p * g[r][c]);
        }
    }
    1.0 - (inter + 1.0) / (union + 1.0)
}
