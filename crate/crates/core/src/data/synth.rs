//! Synthetic side-view vehicle silhouettes with a closed-form drag label.
//!
//! Geometry lives on a 256×256 canonical canvas (ground line at y = 200,
//! nose on the left) and is rasterized at any output side with 4×4
//! supersampling. The label is computed from the parameters, never from
//! pixels:
//!
//! ```text
//! cd = 0.15 + 0.25·(H/L) + 0.15·(1 − a/90) + 0.15·(1 − r/90) + 0.05·(2ρ/H)
//! ```
//!
//! Angles are measured from the vertical, so a steep (blunt) windshield or
//! rear has a small angle and a higher drag.

use rand::Rng;

use super::DatasetRecord;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::ImageTensor;

const CANVAS: f64 = 256.0;
const GROUND: f64 = 200.0;
const SUPERSAMPLE: usize = 4;

const BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];
const BODY: [f64; 3] = [0.72, 0.12, 0.12];
const CABIN: [f64; 3] = [0.35, 0.55, 0.80];
const WHEEL: [f64; 3] = [0.10, 0.10, 0.10];

/// Parameter ranges `(min, max)`, canonical pixels or degrees.
pub mod ranges {
    pub const BODY_LENGTH: (f64, f64) = (160.0, 230.0);
    pub const BODY_HEIGHT: (f64, f64) = (30.0, 70.0);
    pub const CABIN_HEIGHT: (f64, f64) = (12.0, 24.0);
    pub const WINDSHIELD_ANGLE: (f64, f64) = (15.0, 65.0);
    pub const REAR_SLOPE_ANGLE: (f64, f64) = (15.0, 65.0);
    pub const WHEEL_RADIUS: (f64, f64) = (10.0, 22.0);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthVehicleParams {
    pub body_length: f64,
    pub body_height: f64,
    pub cabin_height: f64,
    /// Degrees from vertical.
    pub windshield_angle: f64,
    /// Degrees from vertical.
    pub rear_slope_angle: f64,
    pub wheel_radius: f64,
}

fn within(v: f64, (lo, hi): (f64, f64), name: &str) -> Result<()> {
    if !(v.is_finite() && v >= lo && v <= hi) {
        return Err(Error::invalid(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl SynthVehicleParams {
    pub fn validate(&self) -> Result<()> {
        within(self.body_length, ranges::BODY_LENGTH, "body_length")?;
        within(self.body_height, ranges::BODY_HEIGHT, "body_height")?;
        within(self.cabin_height, ranges::CABIN_HEIGHT, "cabin_height")?;
        within(self.windshield_angle, ranges::WINDSHIELD_ANGLE, "windshield_angle")?;
        within(self.rear_slope_angle, ranges::REAR_SLOPE_ANGLE, "rear_slope_angle")?;
        within(self.wheel_radius, ranges::WHEEL_RADIUS, "wheel_radius")?;
        Ok(())
    }

    pub fn sample(rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let mut u = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        SynthVehicleParams {
            body_length: u(ranges::BODY_LENGTH),
            body_height: u(ranges::BODY_HEIGHT),
            cabin_height: u(ranges::CABIN_HEIGHT),
            windshield_angle: u(ranges::WINDSHIELD_ANGLE),
            rear_slope_angle: u(ranges::REAR_SLOPE_ANGLE),
            wheel_radius: u(ranges::WHEEL_RADIUS),
        }
    }

    /// The oracle drag coefficient.
    pub fn drag_coefficient(&self) -> f64 {
        0.15 + 0.25 * (self.body_height / self.body_length)
            + 0.15 * (1.0 - self.windshield_angle / 90.0)
            + 0.15 * (1.0 - self.rear_slope_angle / 90.0)
            + 0.05 * (2.0 * self.wheel_radius / self.body_height)
    }

    pub fn condition(&self) -> &'static str {
        if self.rear_slope_angle >= 40.0 {
            "fastback"
        } else {
            "notchback"
        }
    }

    /// Rasterizes the silhouette as a `3×side×side` image in `[0, 1]`.
    pub fn render(&self, side: usize) -> ImageTensor {
        let front = (CANVAS - self.body_length) / 2.0;
        let rear = front + self.body_length;
        let body_bottom = GROUND - self.wheel_radius;
        let body_top = body_bottom - self.body_height;
        let cabin_top = body_top - self.cabin_height;
        let base_front = front + 0.15 * self.body_length;
        let base_rear = front + 0.90 * self.body_length;
        let run_front = self.cabin_height * self.windshield_angle.to_radians().tan();
        let run_rear = self.cabin_height * self.rear_slope_angle.to_radians().tan();
        let wheels = [front + 0.2 * self.body_length, front + 0.8 * self.body_length];
        let r2 = self.wheel_radius * self.wheel_radius;

        let colour_at = |u: f64, v: f64| -> [f64; 3] {
            if wheels
                .iter()
                .any(|&cx| (u - cx).powi(2) + (v - body_bottom).powi(2) <= r2)
            {
                return WHEEL;
            }
            if (body_top..=body_bottom).contains(&v) && (front..=rear).contains(&u) {
                return BODY;
            }
            if (cabin_top..body_top).contains(&v) {
                // depth below the cabin roof, 0 at the roof and cabin_height at the base
                let depth = v - cabin_top;
                let left = base_front + run_front * (1.0 - depth / self.cabin_height);
                let right = base_rear - run_rear * (1.0 - depth / self.cabin_height);
                if u >= left && u <= right {
                    return CABIN;
                }
            }
            BACKGROUND
        };

        let scale = CANVAS / side as f64;
        let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        let mut img = ImageTensor::zeros(3, side, side);
        for y in 0..side {
            for x in 0..side {
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let u = (x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64) * scale;
                        let v = (y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64) * scale;
                        let c = colour_at(u, v);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                for (k, a) in acc.iter().enumerate() {
                    img.set(k, y, x, a / n);
                }
            }
        }
        img
    }
}

/// `n` deterministic synthetic records; record `i` draws its parameters
/// from its own stream derived from `seed`.
pub fn synth_vehicle_dataset(n: usize, seed: u64, side: usize) -> Result<Vec<DatasetRecord>> {
    synth_vehicle_dataset_with_params(n, seed, side).map(|v| v.into_iter().map(|(r, _)| r).collect())
}

/// Like [`synth_vehicle_dataset`], also returning each record's parameters.
pub fn synth_vehicle_dataset_with_params(
    n: usize,
    seed: u64,
    side: usize,
) -> Result<Vec<(DatasetRecord, SynthVehicleParams)>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if side < 8 {
        return Err(Error::invalid("image side must be at least 8"));
    }
    (0..n)
        .map(|i| {
            let mut r = rng::stream(rng::derive_seed(seed, i as u64), rng::streams::SYNTH);
            let p = SynthVehicleParams::sample(&mut r);
            let rec = DatasetRecord::new(
                format!("synth_{i:05}"),
                p.render(side),
                p.drag_coefficient(),
                Some(p.condition().to_string()),
            )?;
            Ok((rec, p))
        })
        .collect()
}

/// Closed interval containing every label the sampler can produce.
pub fn label_bounds() -> (f64, f64) {
    use ranges::*;
    let lo = 0.15
        + 0.25 * (BODY_HEIGHT.0 / BODY_LENGTH.1)
        + 0.15 * (1.0 - WINDSHIELD_ANGLE.1 / 90.0)
        + 0.15 * (1.0 - REAR_SLOPE_ANGLE.1 / 90.0)
        + 0.05 * (2.0 * WHEEL_RADIUS.0 / BODY_HEIGHT.1);
    let hi = 0.15
        + 0.25 * (BODY_HEIGHT.1 / BODY_LENGTH.0)
        + 0.15 * (1.0 - WINDSHIELD_ANGLE.0 / 90.0)
        + 0.15 * (1.0 - REAR_SLOPE_ANGLE.0 / 90.0)
        + 0.05 * (2.0 * WHEEL_RADIUS.1 / BODY_HEIGHT.0);
    (lo, hi)
}
