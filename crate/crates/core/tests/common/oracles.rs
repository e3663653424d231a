//! Independent scalar references for the corruption operators: an exact
//! rational tent-kernel resampler and a colorsys-style HSV jitter.

use num_rational::Ratio;
use stic_core::corruption::{CorruptionMode, CorruptionSpec, ImageBuffer};
use stic_core::fraction::Fraction;

pub type Q = Ratio<i128>;

/// Round half away from zero for a non-negative rational.
pub fn round_q(v: Q) -> u8 {
    let twice = v * Q::from_integer(2);
    let n = (twice.numer() + twice.denom()) / (2 * twice.denom());
    n.clamp(0, 255) as u8
}

/// Tent-kernel resampler in exact rational arithmetic. Destination pixel
/// `d` samples the source at `(d + 1/2) * src / dst - 1/2`, clamped to the
/// valid range, weighting each source pixel `i` by `max(0, 1 - |s - i|)`.
pub fn tent_weights(src: u32, dst: u32) -> Vec<Vec<(usize, Q)>> {
    (0..dst)
        .map(|d| {
            let s = Q::new((2 * d as i128 + 1) * src as i128 - dst as i128, 2 * dst as i128)
                .max(Q::from_integer(0))
                .min(Q::from_integer(src as i128 - 1));
            (0..src as usize)
                .filter_map(|i| {
                    let diff = s - Q::from_integer(i as i128);
                    let dist = if diff < Q::from_integer(0) { -diff } else { diff };
                    let w = Q::from_integer(1) - dist;
                    (w > Q::from_integer(0)).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

pub fn oracle_target(dim: u32, factor: Q, floor: u32) -> u32 {
    let scaled = factor * Q::from_integer(dim as i128);
    let r = (scaled + Q::new(1, 2)).floor().to_integer() as u32;
    r.max(floor).min(dim)
}

pub fn oracle_lowres(img: &ImageBuffer, factor: Q, floor: u32) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let (tw, th) = (oracle_target(w, factor, floor), oracle_target(h, factor, floor));
    let wx = tent_weights(w, tw);
    let wy = tent_weights(h, th);
    let mut small = vec![[0u8; 3]; (tw * th) as usize];
    for (ty, ys) in wy.iter().enumerate() {
        for (tx, xs) in wx.iter().enumerate() {
            for c in 0..3 {
                let mut acc = Q::from_integer(0);
                for &(y, a) in ys {
                    for &(x, b) in xs {
                        acc += a * b * Q::from_integer(img.pixel(x as u32, y as u32)[c] as i128);
                    }
                }
                small[ty * tw as usize + tx][c] = round_q(acc);
            }
        }
    }
    // Nearest upscale: destination pixel center maps into source cell floor((d + 1/2) * src / dst).
    let near = |d: u32, dst: u32, src: u32| (Q::new(2 * d as i128 + 1, 2) * Q::new(src as i128, dst as i128)).floor().to_integer() as u32;
    let mut px = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (near(x, w, tw), near(y, h, th));
            px.extend_from_slice(&small[(sy * tw + sx) as usize]);
        }
    }
    ImageBuffer::new(w, h, px).unwrap()
}

pub fn checkerboard(n: u32) -> ImageBuffer {
    let mut px = Vec::new();
    for y in 0..n {
        for x in 0..n {
            let v = if (x + y) % 2 == 0 { 0 } else { 255 };
            px.extend_from_slice(&[v, v, v]);
        }
    }
    ImageBuffer::new(n, n, px).unwrap()
}

pub fn lowres_spec(numer: u64, denom: u64, min_side: u32) -> CorruptionSpec {
    CorruptionSpec {
        mode: CorruptionMode::LowRes {
            factor: Fraction::new(numer, denom),
            min_side,
        },
        seed: 0,
    }
}

/// Scalar jitter reference in the style of Python's `colorsys`: HSV with all
/// components in [0, 1], sector-based reconstruction.
pub fn colorsys_rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let maxc = r.max(g).max(b);
    let minc = r.min(g).min(b);
    let v = maxc;
    if minc == maxc {
        return (0.0, 0.0, v);
    }
    let s = (maxc - minc) / maxc;
    let rc = (maxc - r) / (maxc - minc);
    let gc = (maxc - g) / (maxc - minc);
    let bc = (maxc - b) / (maxc - minc);
    let h = if r == maxc {
        bc - gc
    } else if g == maxc {
        2.0 + rc - bc
    } else {
        4.0 + gc - rc
    };
    ((h / 6.0).rem_euclid(1.0), s, v)
}

pub fn colorsys_hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    if s == 0.0 {
        return (v, v, v);
    }
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub fn oracle_jitter(px: [u8; 3], hue: f64, sat: f64, bright: f64, contrast: f64) -> [f64; 3] {
    let c: Vec<f64> = px
        .iter()
        .map(|&c| (c as f64 * bright).clamp(0.0, 255.0))
        .map(|c| ((c - 127.5) * contrast + 127.5).clamp(0.0, 255.0))
        .collect();
    let (h, s, v) = colorsys_rgb_to_hsv(c[0] / 255.0, c[1] / 255.0, c[2] / 255.0);
    let s = (s * sat).clamp(0.0, 1.0);
    let h = (h + hue / 360.0).rem_euclid(1.0);
    let (r, g, b) = colorsys_hsv_to_rgb(h, s, v);
    [r * 255.0, g * 255.0, b * 255.0]
}

