//! Occlusion augmentation and mask generation.
//!
//! A patch from the occlusion set is classified by aspect ratio, jittered,
//! resized according to its orientation and pasted flush to a random corner
//! of the input. The pixel difference between the original and the occluded
//! image then yields a 4-stripe occlusion mask (1 = visible human part,
//! 0 = occluded); vertical occlusions are ignored and map to all ones.

use rand::Rng as _;

use crate::error::{FedError, Result};
use crate::image::Image;
use crate::rng::Rng;

/// A crop from the occlusion set.
#[derive(Debug, Clone)]
pub struct OcclusionPatch {
    pub image: Image,
    pub source_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

/// Four per-stripe binary labels, top to bottom. 1 = human part, 0 = occlusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionMask {
    pub stripes: [u8; 4],
}

impl OcclusionMask {
    pub const ALL_VISIBLE: OcclusionMask = OcclusionMask { stripes: [1; 4] };

    pub fn to_f32(self) -> [f32; 4] {
        self.stripes.map(|v| v as f32)
    }

    pub fn zeros(&self) -> usize {
        self.stripes.iter().filter(|&&v| v == 0).count()
    }
}

/// An image, its occluded copy and the derived mask.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub original: Image,
    pub occluded: Image,
    pub mask: OcclusionMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

/// One concrete draw of the occlusion randomness, separated out so tests can
/// force extremes (paste size, corner) directly.
#[derive(Debug, Clone)]
pub struct OccludeDraw {
    /// Height of the pasted region for horizontal patches, width for vertical.
    pub extent: usize,
    pub corner: Corner,
    /// Fractional crop kept from the source patch (y0, y1, x0, x1).
    pub crop: (f32, f32, f32, f32),
    /// Per-channel color jitter multipliers.
    pub color: [f32; 3],
}

/// Vertical iff aspect ratio `p_h / p_w` is strictly greater than 3.
pub fn classify_patch(p: &OcclusionPatch) -> Orientation {
    if p.image.h > 3 * p.image.w {
        Orientation::Vertical
    } else {
        Orientation::Horizontal
    }
}

/// Samples the occlusion randomness for an `h x w` target image.
pub fn sample_draw(orientation: Orientation, h: usize, w: usize, rng: &mut Rng) -> OccludeDraw {
    let extent = match orientation {
        Orientation::Horizontal => rng.gen_range(h / 4..=h / 2),
        Orientation::Vertical => rng.gen_range(w / 4..=w / 2),
    };
    let corner = match rng.gen_range(0..4u8) {
        0 => Corner::TopLeft,
        1 => Corner::TopRight,
        2 => Corner::BottomLeft,
        _ => Corner::BottomRight,
    };
    let crop = (
        rng.gen_range(0.0..=0.15f32),
        1.0 - rng.gen_range(0.0..=0.15f32),
        rng.gen_range(0.0..=0.15f32),
        1.0 - rng.gen_range(0.0..=0.15f32),
    );
    let color = [
        rng.gen_range(0.8..=1.2f32),
        rng.gen_range(0.8..=1.2f32),
        rng.gen_range(0.8..=1.2f32),
    ];
    OccludeDraw { extent, corner, crop, color }
}

/// Deterministic occlusion with an explicit draw. `x` is left untouched.
pub fn occlude_with(x: &Image, p: &OcclusionPatch, draw: &OccludeDraw) -> Image {
    let orientation = classify_patch(p);
    let (h, w) = (x.h, x.w);

    // crop + color jitter on the patch
    let (fy0, fy1, fx0, fx1) = draw.crop;
    let y0 = ((p.image.h as f32 * fy0) as usize).min(p.image.h - 1);
    let y1 = ((p.image.h as f32 * fy1).ceil() as usize).clamp(y0 + 1, p.image.h);
    let x0 = ((p.image.w as f32 * fx0) as usize).min(p.image.w - 1);
    let x1 = ((p.image.w as f32 * fx1).ceil() as usize).clamp(x0 + 1, p.image.w);
    let mut cropped = Image::new(y1 - y0, x1 - x0);
    for c in 0..3 {
        for y in 0..cropped.h {
            for xx in 0..cropped.w {
                let v = p.image.get(c, y0 + y, x0 + xx) * draw.color[c];
                cropped.set(c, y, xx, v.clamp(0.0, 1.0));
            }
        }
    }

    // resize according to the occlusion type
    let (ph, pw) = match orientation {
        Orientation::Horizontal => (draw.extent, w),
        Orientation::Vertical => (h, draw.extent),
    };
    let resized = cropped.resize(ph, pw);

    // paste flush to the chosen corner
    let (oy, ox) = match draw.corner {
        Corner::TopLeft => (0, 0),
        Corner::TopRight => (0, w - pw),
        Corner::BottomLeft => (h - ph, 0),
        Corner::BottomRight => (h - ph, w - pw),
    };
    let mut out = x.clone();
    for c in 0..3 {
        for y in 0..ph {
            for xx in 0..pw {
                out.set(c, oy + y, ox + xx, resized.get(c, y, xx));
            }
        }
    }
    out
}

/// Jitters, resizes and pastes `p` onto a random corner of `x`.
pub fn occlude(x: &Image, p: &OcclusionPatch, rng: &mut Rng) -> Image {
    let draw = sample_draw(classify_patch(p), x.h, x.w, rng);
    occlude_with(x, p, &draw)
}

/// Fine-to-coarse mask from the pixel difference `d = |x - x'|`.
///
/// Vertical occlusions are ignored (all stripes labeled 1). For horizontal
/// occlusions a stripe is 0 iff strictly more than three quarters of its
/// pixels changed. A pixel counts as covered when `d > eps` in any channel;
/// pasting replaces pixels exactly, so the default `eps = 0` is exact.
pub fn generate_mask_with_eps(
    x: &Image,
    occluded: &Image,
    orientation: Orientation,
    eps: f32,
) -> Result<OcclusionMask> {
    if (x.h, x.w) != (occluded.h, occluded.w) {
        return Err(FedError::Dim {
            op: "generate_mask",
            lhs: vec![x.h, x.w],
            rhs: vec![occluded.h, occluded.w],
        });
    }
    if x.h % 4 != 0 {
        return Err(FedError::Contract(format!(
            "generate_mask: height {} not divisible by 4",
            x.h
        )));
    }
    if orientation == Orientation::Vertical {
        return Ok(OcclusionMask::ALL_VISIBLE);
    }
    let stripe_h = x.h / 4;
    let mut stripes = [1u8; 4];
    for (s, stripe) in stripes.iter_mut().enumerate() {
        let mut covered = 0usize;
        for y in s * stripe_h..(s + 1) * stripe_h {
            for xx in 0..x.w {
                let diff = (0..3).any(|c| (x.get(c, y, xx) - occluded.get(c, y, xx)).abs() > eps);
                if diff {
                    covered += 1;
                }
            }
        }
        let total = stripe_h * x.w;
        if 4 * covered > 3 * total {
            *stripe = 0;
        }
    }
    Ok(OcclusionMask { stripes })
}

pub fn generate_mask(x: &Image, occluded: &Image, orientation: Orientation) -> Result<OcclusionMask> {
    generate_mask_with_eps(x, occluded, orientation, 0.0)
}

/// Brightness jitter plus a translation of at most 2 pixels (edge replicate).
pub fn common_augment(x: &Image, rng: &mut Rng) -> Image {
    let brightness = rng.gen_range(0.9..=1.1f32);
    let dy = rng.gen_range(-2i64..=2);
    let dx = rng.gen_range(-2i64..=2);
    let mut out = Image::new(x.h, x.w);
    for c in 0..3 {
        for y in 0..x.h {
            let sy = (y as i64 - dy).clamp(0, x.h as i64 - 1) as usize;
            for xx in 0..x.w {
                let sx = (xx as i64 - dx).clamp(0, x.w as i64 - 1) as usize;
                out.set(c, y, xx, (x.get(c, sy, sx) * brightness).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Full augmentation: common jitter, uniform patch pick, occlusion, mask.
pub fn augment_pair(x: &Image, patch_set: &[OcclusionPatch], rng: &mut Rng) -> Result<AugmentedPair> {
    if patch_set.is_empty() {
        return Err(FedError::Config("augment_pair: empty patch set".into()));
    }
    let base = common_augment(x, rng);
    let patch = &patch_set[rng.gen_range(0..patch_set.len())];
    let orientation = classify_patch(patch);
    let occluded = occlude(&base, patch, rng);
    let mask = generate_mask(&base, &occluded, orientation)?;
    Ok(AugmentedPair { original: base, occluded, mask })
}

/// Minimal random-erasing reference: with probability `prob`, a random
/// rectangle covering 10-30% of the area is replaced by uniform noise.
pub fn random_erasing(x: &Image, rng: &mut Rng, prob: f64) -> Image {
    let mut out = x.clone();
    if !rng.gen_bool(prob) {
        return out;
    }
    let area = (x.h * x.w) as f32 * rng.gen_range(0.1..=0.3f32);
    let aspect = rng.gen_range(0.5..=2.0f32);
    let rh = ((area * aspect).sqrt() as usize).clamp(1, x.h);
    let rw = ((area / aspect).sqrt() as usize).clamp(1, x.w);
    let oy = rng.gen_range(0..=x.h - rh);
    let ox = rng.gen_range(0..=x.w - rw);
    for c in 0..3 {
        for y in oy..oy + rh {
            for xx in ox..ox + rw {
                out.set(c, y, xx, rng.gen::<f32>());
            }
        }
    }
    out
}
