//! Procedural dataset: identity-labeled pedestrian-like figures plus an
//! occlusion patch set, so the whole pipeline trains and evaluates without
//! any external data.
//!
//! Figures are rendered as four stacked bands (head/torso/legs/feet analog)
//! whose colors and textures are identity-specific; per-sample jitter
//! (brightness, small translation, background noise) provides intra-identity
//! variation. Everything is a pure function of (arguments, seed).

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::augment::{augment_pair, OcclusionPatch};
use crate::error::{FedError, Result};
use crate::image::Image;
use crate::rng::{stream, sub_seed, Rng};

const CAMERAS: usize = 4;
const BACKGROUND: f32 = 0.85;

/// Per-band texture of a rendered figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    Solid,
    HorizontalStripes,
    VerticalStripes,
    Checker,
}

/// A renderable identity.
#[derive(Debug, Clone)]
pub struct Identity {
    pub id: usize,
    pub appearance_seed: u64,
    pub palette: [[f32; 3]; 3],
    pub stripe_layout: [Texture; 4],
}

/// One labeled image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    pub identity: usize,
    pub camera: usize,
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

impl Identity {
    /// Deterministic identity appearance: hue anchored by a golden-ratio
    /// walk over the id so palettes of different identities stay apart.
    pub fn generate(id: usize, dataset_seed: u64) -> Identity {
        use rand_chacha::rand_core::SeedableRng;
        let appearance_seed = sub_seed(dataset_seed, &format!("identity-{id}"));
        let mut rng = Rng::seed_from_u64(appearance_seed);
        let base_hue = (id as f32 * 0.618_034) % 1.0;
        let palette = [
            hsv_to_rgb(base_hue, 0.55 + 0.3 * rng.gen::<f32>(), 0.55 + 0.35 * rng.gen::<f32>()),
            hsv_to_rgb(
                base_hue + 0.23 + 0.1 * rng.gen::<f32>(),
                0.5 + 0.35 * rng.gen::<f32>(),
                0.5 + 0.4 * rng.gen::<f32>(),
            ),
            hsv_to_rgb(
                base_hue + 0.51 + 0.1 * rng.gen::<f32>(),
                0.45 + 0.35 * rng.gen::<f32>(),
                0.45 + 0.4 * rng.gen::<f32>(),
            ),
        ];
        let textures = [
            Texture::Solid,
            Texture::HorizontalStripes,
            Texture::VerticalStripes,
            Texture::Checker,
        ];
        let stripe_layout = [
            Texture::Solid,
            *textures.choose(&mut rng).unwrap(),
            *textures.choose(&mut rng).unwrap(),
            *textures.choose(&mut rng).unwrap(),
        ];
        Identity { id, appearance_seed, palette, stripe_layout }
    }

    /// Band colors, top to bottom: head, torso, legs, feet.
    fn band_color(&self, band: usize) -> [f32; 3] {
        match band {
            0 => self.palette[0],
            1 => self.palette[1],
            2 => self.palette[2],
            _ => self.palette[1].map(|v| v * 0.45),
        }
    }
}

fn texture_value(tex: Texture, color: [f32; 3], y: usize, x: usize) -> [f32; 3] {
    let dark = color.map(|v| v * 0.5);
    let pick_dark = match tex {
        Texture::Solid => false,
        Texture::HorizontalStripes => (y / 2) % 2 == 1,
        Texture::VerticalStripes => (x / 2) % 2 == 1,
        Texture::Checker => ((y / 2) + (x / 2)) % 2 == 1,
    };
    if pick_dark {
        dark
    } else {
        color
    }
}

/// Generates `ids x per_id` samples. Deterministic for a given seed.
pub fn generate_dataset(
    ids: usize,
    per_id: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if ids < 2 || per_id < 2 {
        return Err(FedError::Config(format!(
            "generate_dataset: need ids >= 2 and per_id >= 2, got ids={ids} per_id={per_id}"
        )));
    }
    if h % 4 != 0 || w % 4 != 0 {
        return Err(FedError::Config(format!(
            "generate_dataset: extents must be multiples of 4, got {h}x{w}"
        )));
    }
    let mut samples = Vec::with_capacity(ids * per_id);
    for id in 0..ids {
        let identity = Identity::generate(id, seed);
        for s in 0..per_id {
            let mut jitter = stream(seed, &format!("sample-{id}-{s}"));
            let image = draw_figure(&identity, h, w, &mut jitter);
            samples.push(Sample { image, identity: id, camera: s % CAMERAS });
        }
    }
    Ok(samples)
}

fn draw_figure(identity: &Identity, h: usize, w: usize, jitter: &mut Rng) -> Image {
    let mut img = Image::filled(h, w, [BACKGROUND; 3]);
    for v in &mut img.data {
        *v += jitter.gen_range(-0.03..=0.03);
    }

    let dy = jitter.gen_range(-2i64..=2);
    let dx = jitter.gen_range(-2i64..=2);
    // band widths as fractions of w, centered: head, torso, legs, feet.
    // the figure dominates the frame so identity appearance, not background,
    // drives pixel and feature distances
    let widths = [w / 2, (7 * w) / 8, (3 * w) / 4, w / 2];
    let band_h = h / 4;
    for band in 0..4 {
        let color = identity.band_color(band);
        let tex = identity.stripe_layout[band];
        let bw = widths[band].max(2);
        let x0 = (w - bw) / 2;
        for y in 0..band_h {
            let yy = (band * band_h + y) as i64 + dy;
            if yy < 0 || yy >= h as i64 {
                continue;
            }
            for x in 0..bw {
                let xx = (x0 + x) as i64 + dx;
                if xx < 0 || xx >= w as i64 {
                    continue;
                }
                let rgb = texture_value(tex, color, band * band_h + y, x0 + x);
                for c in 0..3 {
                    img.set(c, yy as usize, xx as usize, rgb[c]);
                }
            }
        }
    }

    let brightness = jitter.gen_range(0.9..=1.1);
    for v in &mut img.data {
        *v *= brightness;
    }
    img.clamp_unit();
    img
}

/// Generates an occlusion patch set with both tall (aspect ratio > 3) and
/// wide patches, using non-pedestrian textures (solid blocks, gradients,
/// grids). Alternates orientation so both classes appear whenever
/// `count >= 2`.
pub fn generate_patch_set(count: usize, seed: u64) -> Result<Vec<OcclusionPatch>> {
    if count == 0 {
        return Err(FedError::Config("generate_patch_set: count must be >= 1".into()));
    }
    let mut rng = stream(seed, "patches");
    let mut patches = Vec::with_capacity(count);
    for i in 0..count {
        let tall = i % 2 == 1;
        let (p_h, p_w) = if tall {
            let p_w = rng.gen_range(6..=10usize);
            (rng.gen_range(3 * p_w + 1..=5 * p_w), p_w)
        } else {
            let p_h = rng.gen_range(6..=12usize);
            (p_h, rng.gen_range(p_h.max(8)..=3 * p_h))
        };
        let kind = rng.gen_range(0..3u8);
        let shade = rng.gen_range(0.15..0.75f32);
        let tint: [f32; 3] = [
            shade + rng.gen_range(-0.1..=0.1),
            shade + rng.gen_range(-0.1..=0.1),
            shade + rng.gen_range(-0.1..=0.1),
        ];
        let mut image = Image::new(p_h, p_w);
        let tag;
        match kind {
            0 => {
                tag = format!("synthetic:block-{i}");
                for c in 0..3 {
                    for y in 0..p_h {
                        for x in 0..p_w {
                            image.set(c, y, x, tint[c]);
                        }
                    }
                }
            }
            1 => {
                tag = format!("synthetic:gradient-{i}");
                let horizontal_ramp = rng.gen_bool(0.5);
                let hi = rng.gen_range(0.6..0.95f32);
                for y in 0..p_h {
                    for x in 0..p_w {
                        let t = if horizontal_ramp {
                            x as f32 / (p_w.max(2) - 1) as f32
                        } else {
                            y as f32 / (p_h.max(2) - 1) as f32
                        };
                        for c in 0..3 {
                            image.set(c, y, x, tint[c] * (1.0 - t) + hi * t);
                        }
                    }
                }
            }
            _ => {
                tag = format!("synthetic:grid-{i}");
                let period = rng.gen_range(3..=4usize);
                for y in 0..p_h {
                    for x in 0..p_w {
                        let line = y % period == 0 || x % period == 0;
                        let v = if line { 0.1 } else { 0.9 };
                        for c in 0..3 {
                            image.set(c, y, x, v * tint[c].max(0.4));
                        }
                    }
                }
            }
        }
        image.clamp_unit();
        patches.push(OcclusionPatch { image, source_tag: tag });
    }
    Ok(patches)
}

/// Splits the last `holdout_ids` identities into disjoint query and gallery
/// image sets. With `occlude_queries`, every query image is passed through
/// the occlusion augmentation first.
pub fn split_query_gallery(
    samples: &[Sample],
    holdout_ids: usize,
    occlude_queries: bool,
    patches: &[OcclusionPatch],
    rng: &mut Rng,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let total_ids = samples.iter().map(|s| s.identity).max().map_or(0, |m| m + 1);
    if holdout_ids > total_ids {
        return Err(FedError::Split(format!(
            "holdout_ids {holdout_ids} exceeds total identities {total_ids}"
        )));
    }
    let first_holdout = total_ids - holdout_ids;
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for id in first_holdout..total_ids {
        let mut indices: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.identity == id)
            .map(|(i, _)| i)
            .collect();
        if indices.len() < 2 {
            return Err(FedError::Split(format!(
                "identity {id} has {} samples, need at least 2 for a query/gallery split",
                indices.len()
            )));
        }
        indices.shuffle(rng);
        let n_query = indices.len() / 2;
        for (pos, &i) in indices.iter().enumerate() {
            let sample = &samples[i];
            if pos < n_query {
                let image = if occlude_queries {
                    augment_pair(&sample.image, patches, rng)?.occluded
                } else {
                    sample.image.clone()
                };
                query.push(Sample { image, identity: sample.identity, camera: sample.camera });
            } else {
                gallery.push(sample.clone());
            }
        }
    }
    Ok((query, gallery))
}
