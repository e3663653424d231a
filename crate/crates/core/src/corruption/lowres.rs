use super::{validate_factor, CorruptionError, ImageBuffer, DEFAULT_MIN_SIDE};
use crate::fraction::Fraction;

/// Side length of the intermediate image: `round(dim * factor)`, raised to
/// `min_side` but never above `dim`.
pub fn lowres_target(dim: u32, factor: Fraction, min_side: u32) -> u32 {
    let scaled = factor.round_mul(dim as u64) as u32;
    scaled.max(min_side).min(dim).max(1)
}

/// Bilinear downscale then nearest-neighbor upscale back to the input size.
pub fn corrupt_lowres(img: &ImageBuffer, factor: Fraction) -> Result<ImageBuffer, CorruptionError> {
    corrupt_lowres_with_floor(img, factor, DEFAULT_MIN_SIDE)
}

pub(crate) fn corrupt_lowres_with_floor(
    img: &ImageBuffer,
    factor: Fraction,
    min_side: u32,
) -> Result<ImageBuffer, CorruptionError> {
    validate_factor(factor)?;
    let (w, h) = (img.width(), img.height());
    let tw = lowres_target(w, factor, min_side);
    let th = lowres_target(h, factor, min_side);
    if tw == w && th == h {
        return Ok(img.clone());
    }
    let small = downscale_bilinear(img, tw, th);
    Ok(upscale_nearest(&small, w, h))
}

/// Source sample for one destination index: `lo + num / den` in source
/// pixel units, with `hi` the right-hand neighbor.
struct Tap {
    lo: usize,
    hi: usize,
    num: u128,
    den: u128,
}

// Half-pixel-center mapping `s = ((2d + 1) * src - dst) / (2 * dst)`, clamped
// to `[0, src - 1]`. Kept in integers so the weights are exact.
fn taps(src: u32, dst: u32) -> Vec<Tap> {
    let (src, dst) = (src as i128, dst as i128);
    let den = 2 * dst;
    (0..dst)
        .map(|d| {
            let n = (2 * d + 1) * src - dst;
            let (lo, num) = if n <= 0 {
                (0, 0)
            } else if n >= (src - 1) * den {
                (src - 1, 0)
            } else {
                (n / den, n % den)
            };
            Tap {
                lo: lo as usize,
                hi: (lo + 1).min(src - 1) as usize,
                num: num as u128,
                den: den as u128,
            }
        })
        .collect()
}

fn downscale_bilinear(img: &ImageBuffer, tw: u32, th: u32) -> ImageBuffer {
    let xs = taps(img.width(), tw);
    let ys = taps(img.height(), th);
    let src = img.pixels();
    let stride = img.width() as usize * 3;
    let mut out = Vec::with_capacity(tw as usize * th as usize * 3);
    for ty in &ys {
        for tx in &xs {
            let scale = tx.den * ty.den;
            for c in 0..3 {
                let at = |y: usize, x: usize| src[y * stride + x * 3 + c] as u128;
                let top = at(ty.lo, tx.lo) * (tx.den - tx.num) + at(ty.lo, tx.hi) * tx.num;
                let bottom = at(ty.hi, tx.lo) * (tx.den - tx.num) + at(ty.hi, tx.hi) * tx.num;
                let v = top * (ty.den - ty.num) + bottom * ty.num;
                // v / scale rounded half up; v is non-negative.
                out.push(((2 * v + scale) / (2 * scale)).min(255) as u8);
            }
        }
    }
    ImageBuffer::new(tw, th, out).expect("dimensions computed above")
}

fn upscale_nearest(img: &ImageBuffer, w: u32, h: u32) -> ImageBuffer {
    let (sw, sh) = (img.width() as u64, img.height() as u64);
    let index = |d: u64, dst: u64, src: u64| (((2 * d + 1) * src) / (2 * dst)).min(src - 1) as usize;
    let cols: Vec<usize> = (0..w as u64).map(|x| index(x, w as u64, sw)).collect();
    let src = img.pixels();
    let stride = sw as usize * 3;
    let mut out = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h as u64 {
        let row = &src[index(y, h as u64, sh) * stride..][..stride];
        for &x in &cols {
            out.extend_from_slice(&row[x * 3..x * 3 + 3]);
        }
    }
    ImageBuffer::new(w, h, out).expect("dimensions match input")
}
