use super::{CorruptionError, CorruptionMode, CorruptionSpec, ImageBuffer};

const CONTRAST_PIVOT: f64 = 127.5;

/// Brightness, contrast, saturation, then hue rotation.
///
/// Channels stay in floating point between steps and are clamped to
/// `[0, 255]` after each one; rounding to `u8` happens once at the end.
pub fn corrupt_jitter(img: &ImageBuffer, spec: &CorruptionSpec) -> Result<ImageBuffer, CorruptionError> {
    spec.validate()?;
    let CorruptionMode::ColorJitter {
        hue_shift_deg,
        sat_scale,
        bright_scale,
        contrast_scale,
    } = spec.mode
    else {
        return Err(CorruptionError::WrongMode {
            expected: "color_jitter",
        });
    };

    let mut out = Vec::with_capacity(img.pixels().len());
    for px in img.pixels().chunks_exact(3) {
        let mut rgb = [px[0] as f64, px[1] as f64, px[2] as f64];
        for c in &mut rgb {
            *c = (*c * bright_scale).clamp(0.0, 255.0);
        }
        for c in &mut rgb {
            *c = ((*c - CONTRAST_PIVOT) * contrast_scale + CONTRAST_PIVOT).clamp(0.0, 255.0);
        }
        let (h, s, v) = rgb_to_hsv(rgb);
        let s = (s * sat_scale).clamp(0.0, 1.0);
        let h = (h + hue_shift_deg).rem_euclid(360.0);
        for c in hsv_to_rgb(h, s, v) {
            out.push(c.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(ImageBuffer::new(img.width(), img.height(), out).expect("same shape as input"))
}

/// Hue in degrees `[0, 360)`, saturation in `[0, 1]`, value in `[0, 255]`.
fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (60.0 * ((g - b) / delta)).rem_euclid(360.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}
