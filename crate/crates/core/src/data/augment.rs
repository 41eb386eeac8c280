use rand::Rng;

use super::Pair;
use crate::IGNORE_INDEX;

/// The random decisions of one augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub flip: bool,
    pub scale: f64,
    /// Top-left corner of the crop in the scaled, padded pair, as a
    /// fraction of the available slack in `[0, 1]`.
    pub crop_y: f64,
    pub crop_x: f64,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        flip: false,
        scale: 1.0,
        crop_y: 0.0,
        crop_x: 0.0,
    };

    pub fn draw<R: Rng + ?Sized>(scale_lo: f64, scale_hi: f64, rng: &mut R) -> Self {
        let flip = rng.random_bool(0.5);
        let scale = if scale_hi > scale_lo {
            rng.random_range(scale_lo..=scale_hi)
        } else {
            scale_lo
        };
        Augmentation {
            flip,
            scale,
            crop_y: rng.random(),
            crop_x: rng.random(),
        }
    }
}

pub fn flip_horizontal(pair: &Pair) -> Pair {
    let (h, w) = (pair.height, pair.width);
    let mut rgb = vec![0u8; pair.rgb.len()];
    let mut label = vec![0u8; pair.label.len()];
    for y in 0..h {
        for x in 0..w {
            let (src, dst) = (y * w + x, y * w + (w - 1 - x));
            label[dst] = pair.label[src];
            rgb[3 * dst..3 * dst + 3].copy_from_slice(&pair.rgb[3 * src..3 * src + 3]);
        }
    }
    Pair {
        height: h,
        width: w,
        rgb,
        label,
    }
}

/// Pixel-center source coordinate of output index `o` when `from` pixels
/// are resized to `to`.
fn source(o: usize, from: usize, to: usize) -> f64 {
    (o as f64 + 0.5) * from as f64 / to as f64 - 0.5
}

/// Bilinear resize of interleaved RGB with edge clamping.
pub fn resize_image(rgb: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    if (oh, ow) == (h, w) {
        return rgb.to_vec();
    }
    let axis = |o: usize, from: usize, to: usize| {
        let s = source(o, from, to).clamp(0.0, (from - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(from - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(oh * ow * 3);
    for oy in 0..oh {
        let (y0, y1, fy) = axis(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, fx) = axis(ox, w, ow);
            for c in 0..3 {
                let px = |y: usize, x: usize| rgb[3 * (y * w + x) + c] as f64;
                let top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
                let bottom = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Nearest-neighbor resize; never produces a value absent from the input.
pub fn resize_label(label: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    let near = |o: usize, from: usize, to: usize| ((o * 2 + 1) * from / (2 * to)).min(from - 1);
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let y = near(oy, h, oh);
        for ox in 0..ow {
            out.push(label[y * w + near(ox, w, ow)]);
        }
    }
    out
}

/// Applies fixed augmentation decisions: flip, scale, then a `crop×crop`
/// window. A scaled pair smaller than the crop is padded at the bottom and
/// right with image value 0 and the ignore label.
pub fn augment_with(pair: &Pair, crop: usize, aug: Augmentation) -> Pair {
    assert!(crop > 0, "crop size must be positive");
    let flipped;
    let p = if aug.flip {
        flipped = flip_horizontal(pair);
        &flipped
    } else {
        pair
    };
    let sh = ((p.height as f64 * aug.scale).round() as usize).max(1);
    let sw = ((p.width as f64 * aug.scale).round() as usize).max(1);
    let rgb = resize_image(&p.rgb, p.height, p.width, sh, sw);
    let label = resize_label(&p.label, p.height, p.width, sh, sw);

    let (ph, pw) = (sh.max(crop), sw.max(crop));
    let top = ((ph - crop) as f64 * aug.crop_y).round() as usize;
    let left = ((pw - crop) as f64 * aug.crop_x).round() as usize;
    let mut out_rgb = vec![0u8; crop * crop * 3];
    let mut out_label = vec![IGNORE_INDEX; crop * crop];
    for y in 0..crop {
        let sy = top + y;
        if sy >= sh {
            break;
        }
        for x in 0..crop {
            let sx = left + x;
            if sx >= sw {
                break;
            }
            let (src, dst) = (sy * sw + sx, y * crop + x);
            out_label[dst] = label[src];
            out_rgb[3 * dst..3 * dst + 3].copy_from_slice(&rgb[3 * src..3 * src + 3]);
        }
    }
    Pair {
        height: crop,
        width: crop,
        rgb: out_rgb,
        label: out_label,
    }
}

/// Random flip (p = 0.5), uniform scale in `[scale_lo, scale_hi]` and a
/// random `crop×crop` window.
pub fn augment<R: Rng + ?Sized>(pair: &Pair, crop: usize, scale_lo: f64, scale_hi: f64, rng: &mut R) -> Pair {
    augment_with(pair, crop, Augmentation::draw(scale_lo, scale_hi, rng))
}
