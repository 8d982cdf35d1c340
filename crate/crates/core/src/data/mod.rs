//! Datasets of labeled vehicle images: ingestion, augmentation, resizing and
//! a synthetic silhouette generator with a closed-form drag label.

pub mod augment;
pub mod io;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::resize::resize;
use crate::tensor::ImageTensor;

pub use augment::{augment, AugmentParams, AUGMENT_COPIES};
pub use io::{load_dataset, save_dataset};
pub use synth::{synth_vehicle_dataset, SynthVehicleParams};

/// Input side of the surrogate's feature extractor.
pub const SURROGATE_SIDE: usize = 224;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    /// `3×H×W`, values in `[0, 1]`.
    pub image: ImageTensor,
    /// Dimensionless drag coefficient.
    pub drag_label: f64,
    pub condition: Option<String>,
}

impl DatasetRecord {
    pub fn new(id: impl Into<String>, image: ImageTensor, drag_label: f64, condition: Option<String>) -> Result<Self> {
        let id = id.into();
        if !drag_label.is_finite() {
            return Err(Error::NonFinite(format!("drag label of {id}")));
        }
        if image.channels() != 3 {
            return Err(Error::invalid(format!("record {id} must have 3 channels")));
        }
        if image.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("record {id} has pixel values outside [0, 1]")));
        }
        Ok(Self {
            id,
            image,
            drag_label,
            condition,
        })
    }
}

/// Bilinear resize to `3×224×224`; the identity for images already that size.
pub fn resize_to_224(image: &ImageTensor) -> Result<ImageTensor> {
    if image.is_empty() {
        return Err(Error::invalid("cannot resize an empty image"));
    }
    resize(image, SURROGATE_SIDE, SURROGATE_SIDE)
}

/// Deterministic 80/20 split by a stable hash of the id; returns
/// `(train, test)` index lists in input order.
pub fn split_by_id(records: &[DatasetRecord]) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if fnv1a(r.id.as_bytes()).is_multiple_of(5) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // fold the high bits in so the modulus sees the whole hash
    h ^ (h >> 32)
}
