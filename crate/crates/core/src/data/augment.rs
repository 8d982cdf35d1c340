//! Training-set augmentation: horizontal flip, vertical shift and colour
//! jitter, applied to produce a fixed number of copies per record.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::DatasetRecord;
use crate::rng;
use crate::tensor::ImageTensor;

pub const AUGMENT_COPIES: usize = 10;
/// Maximum vertical shift, in pixels of a 224-pixel-tall image.
pub const MAX_SHIFT_224: f64 = 25.0;
/// Colour jitter factors lie in `[1 − J, 1 + J]`; hue shifts in `[−J, J]` turns.
pub const JITTER: f64 = 0.05;
pub const FLIP_PROBABILITY: f64 = 0.5;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// One concrete augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Rows to move the content down (negative moves it up).
    pub shift: i64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue rotation as a fraction of a full turn.
    pub hue: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        shift: 0,
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };

    /// Draws parameters for an image of the given height. The shift bound
    /// scales with height so it is 25 pixels at the 224-pixel model input.
    pub fn sample(rng: &mut ChaCha8Rng, height: usize) -> Self {
        let max_shift = (MAX_SHIFT_224 * height as f64 / 224.0).round() as i64;
        AugmentParams {
            flip: rng.random_bool(FLIP_PROBABILITY),
            shift: rng.random_range(-max_shift..=max_shift),
            brightness: rng.random_range(1.0 - JITTER..=1.0 + JITTER),
            contrast: rng.random_range(1.0 - JITTER..=1.0 + JITTER),
            saturation: rng.random_range(1.0 - JITTER..=1.0 + JITTER),
            hue: rng.random_range(-JITTER..=JITTER),
        }
    }

    /// Flip, shift, then brightness, contrast, saturation and hue; the
    /// result is clamped to `[0, 1]`.
    pub fn apply(&self, image: &ImageTensor) -> ImageTensor {
        let mut out = image.clone();
        if self.flip {
            out = flip_horizontal(&out);
        }
        if self.shift != 0 {
            out = shift_vertical(&out, self.shift);
        }
        if self.brightness != 1.0 {
            out = out.scale(self.brightness);
        }
        if self.contrast != 1.0 {
            let mean = luma_mean(&out);
            out = out.map(|v| self.contrast * v + (1.0 - self.contrast) * mean);
        }
        if self.saturation != 1.0 && out.channels() == 3 {
            out = blend_with_luma(&out, self.saturation);
        }
        if self.hue != 0.0 && out.channels() == 3 {
            out = rotate_hue(&out, self.hue);
        }
        out.clamp(0.0, 1.0)
    }
}

pub fn flip_horizontal(image: &ImageTensor) -> ImageTensor {
    let (c, h, w) = image.shape();
    let mut out = ImageTensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set(ch, y, x, image.get(ch, y, w - 1 - x));
            }
        }
    }
    out
}

/// Moves rows by `shift`, replicating the edge row into the vacated space.
pub fn shift_vertical(image: &ImageTensor, shift: i64) -> ImageTensor {
    let (c, h, w) = image.shape();
    let mut out = ImageTensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            let src = (y as i64 - shift).clamp(0, h as i64 - 1) as usize;
            for x in 0..w {
                out.set(ch, y, x, image.get(ch, src, x));
            }
        }
    }
    out
}

fn luma_mean(image: &ImageTensor) -> f64 {
    let (c, h, w) = image.shape();
    if c != 3 {
        return image.mean();
    }
    let plane = h * w;
    let s = image.as_slice();
    (0..plane)
        .map(|i| LUMA[0] * s[i] + LUMA[1] * s[plane + i] + LUMA[2] * s[2 * plane + i])
        .sum::<f64>()
        / plane as f64
}

fn blend_with_luma(image: &ImageTensor, factor: f64) -> ImageTensor {
    let (_, h, w) = image.shape();
    let plane = h * w;
    let s = image.as_slice();
    let mut out = s.to_vec();
    for i in 0..plane {
        let l = LUMA[0] * s[i] + LUMA[1] * s[plane + i] + LUMA[2] * s[2 * plane + i];
        for ch in 0..3 {
            out[ch * plane + i] = factor * s[ch * plane + i] + (1.0 - factor) * l;
        }
    }
    ImageTensor::from_vec(3, h, w, out).expect("blend keeps shape")
}

/// Rotates chroma in YIQ space by `turns` of a full circle.
fn rotate_hue(image: &ImageTensor, turns: f64) -> ImageTensor {
    let to_yiq = Matrix3::new(0.299, 0.587, 0.114, 0.596, -0.274, -0.322, 0.211, -0.523, 0.312);
    let from_yiq = to_yiq.try_inverse().expect("YIQ matrix is invertible");
    let (sin, cos) = (turns * std::f64::consts::TAU).sin_cos();
    let rot = Matrix3::new(1.0, 0.0, 0.0, 0.0, cos, -sin, 0.0, sin, cos);
    let m = from_yiq * rot * to_yiq;
    let (_, h, w) = image.shape();
    let plane = h * w;
    let s = image.as_slice();
    let mut out = vec![0.0; s.len()];
    for i in 0..plane {
        let v = m * Vector3::new(s[i], s[plane + i], s[2 * plane + i]);
        for ch in 0..3 {
            out[ch * plane + i] = v[ch];
        }
    }
    ImageTensor::from_vec(3, h, w, out).expect("rotation keeps shape")
}

/// Produces [`AUGMENT_COPIES`] jittered copies of a record. Labels and
/// conditions are copied unchanged; copy `k` draws from its own seeded stream.
pub fn augment(record: &DatasetRecord, seed: u64) -> Vec<DatasetRecord> {
    (0..AUGMENT_COPIES)
        .map(|k| {
            let mut r = rng::stream(rng::derive_seed(seed, k as u64), rng::streams::AUGMENT);
            let params = AugmentParams::sample(&mut r, record.image.height());
            DatasetRecord {
                id: format!("{}_aug{k}", record.id),
                image: params.apply(&record.image),
                drag_label: record.drag_label,
                condition: record.condition.clone(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_vehicle_dataset;

    fn sample_record() -> DatasetRecord {
        synth_vehicle_dataset(1, 5, 48).unwrap().remove(0)
    }

    #[test]
    fn identity_draw_copies_image() {
        let r = sample_record();
        assert_eq!(AugmentParams::IDENTITY.apply(&r.image), r.image);
    }

    #[test]
    fn ten_copies_with_original_label() {
        let r = sample_record();
        let out = augment(&r, 3);
        assert_eq!(out.len(), 10);
        assert!(out
            .iter()
            .all(|a| a.drag_label == r.drag_label && a.condition == r.condition));
        assert!(out
            .iter()
            .all(|a| a.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(out, augment(&r, 3));
        assert_ne!(out, augment(&r, 4));
    }

    #[test]
    fn double_flip_is_identity() {
        let r = sample_record();
        assert_eq!(flip_horizontal(&flip_horizontal(&r.image)), r.image);
    }

    #[test]
    fn shift_replicates_edges() {
        let mut img = ImageTensor::zeros(1, 4, 2);
        for y in 0..4 {
            for x in 0..2 {
                img.set(0, y, x, y as f64);
            }
        }
        let down = shift_vertical(&img, 2);
        assert_eq!(down.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let up = shift_vertical(&img, -1);
        assert_eq!(up.as_slice(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn sampled_params_stay_in_range() {
        let mut r = rng::stream(1, 0);
        for _ in 0..500 {
            let p = AugmentParams::sample(&mut r, 224);
            assert!(p.shift.abs() <= 25);
            for f in [p.brightness, p.contrast, p.saturation] {
                assert!((0.95..=1.05).contains(&f));
            }
            assert!(p.hue.abs() <= 0.05);
        }
    }

    #[test]
    fn small_hue_rotation_is_near_identity() {
        let r = sample_record();
        let p = AugmentParams {
            hue: 1e-9,
            ..AugmentParams::IDENTITY
        };
        let out = p.apply(&r.image);
        for (a, b) in out.as_slice().iter().zip(r.image.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
