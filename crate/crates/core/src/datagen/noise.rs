//! Stateless hashing and multi-octave value noise.

pub const OCTAVES: usize = 4;
pub const PERSISTENCE: f64 = 0.5;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a sequence of words, folded through splitmix64.
pub fn hash(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3, |h, &w| splitmix64(h ^ w))
}

/// Uniform in `[0, 1)` from the top 53 bits.
pub fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Value noise in `[0, 1]` on an `h×w` grid. The first octave has lattice
/// period `period` pixels; each further octave halves the period and
/// multiplies the amplitude by `persistence`.
pub fn value_noise(h: usize, w: usize, period: f64, octaves: usize, persistence: f64, key: u64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut amp = 1.0;
    let mut total = 0.0;
    for o in 0..octaves {
        let p = period / (1u64 << o) as f64;
        let lattice = |i: i64, j: i64| unit(hash(&[key, o as u64, i as u64, j as u64]));
        for y in 0..h {
            let fy = y as f64 / p;
            let (iy, ty) = (fy.floor() as i64, fy - fy.floor());
            for x in 0..w {
                let fx = x as f64 / p;
                let (ix, tx) = (fx.floor() as i64, fx - fx.floor());
                let top = lattice(iy, ix) * (1.0 - tx) + lattice(iy, ix + 1) * tx;
                let bot = lattice(iy + 1, ix) * (1.0 - tx) + lattice(iy + 1, ix + 1) * tx;
                out[y * w + x] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
        total += amp;
        amp *= persistence;
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}
