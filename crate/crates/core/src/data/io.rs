//! PNG images and the `labels.csv` dataset layout.
//!
//! ```text
//! <dir>/labels.csv      filename,cd,condition
//! <dir>/images/*.png    8-bit RGB
//! ```

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::DatasetRecord;
use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::tensor::ImageTensor;

/// Decodes a PNG into a `3×H×W` tensor with values in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<ImageTensor> {
    if !path.exists() {
        return Err(Error::data(path, "image file not found"));
    }
    let img = image::open(path)
        .map_err(|e| Error::data(path, format!("cannot decode image: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = ImageTensor::zeros(3, h, w);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set(c, y as usize, x as usize, px[c] as f64 / 255.0);
        }
    }
    Ok(t)
}

/// Writes a 1- or 3-channel tensor as an 8-bit PNG, mapping `[lo, hi]`
/// affinely onto `[0, 255]` (values outside are clipped).
pub fn write_png(path: &Path, image: &ImageTensor, lo: f64, hi: f64) -> Result<()> {
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::invalid("png range needs hi > lo"));
    }
    let (c, h, w) = image.shape();
    let q = |v: f64| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8;
    let result = match c {
        3 => ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Rgb([0, 1, 2].map(|ch| q(image.get(ch, y as usize, x as usize))))
        })
        .save(path),
        1 => ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Luma([q(image.get(0, y as usize, x as usize))])
        })
        .save(path),
        _ => return Err(Error::invalid(format!("cannot write a {c}-channel image as png"))),
    };
    result.map_err(|e| Error::data(path, format!("cannot write png: {e}")))
}

/// Reads `labels.csv` and the images it references. Pixels are scaled to
/// `[0, 1]`; the record id is the file stem.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetRecord>> {
    let labels = dir.join("labels.csv");
    if !labels.exists() {
        return Err(Error::data(&labels, "labels.csv not found"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(&labels)
        .map_err(|e| Error::data(&labels, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(&labels, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (fcol, ccol) = match (col("filename"), col("cd")) {
        (Some(f), Some(c)) => (f, c),
        _ => return Err(Error::data(&labels, "header must contain filename and cd columns")),
    };
    let condcol = col("condition");

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let rec = rec.map_err(|e| Error::data(&labels, format!("row {row}: {e}")))?;
        let filename = rec
            .get(fcol)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::data(&labels, format!("row {row}: missing filename")))?;
        let cd_text = rec
            .get(ccol)
            .ok_or_else(|| Error::data(&labels, format!("row {row}: missing cd")))?;
        let cd: f64 = cd_text
            .parse()
            .map_err(|_| Error::data(&labels, format!("row {row}: cannot parse cd {cd_text:?}")))?;
        if !cd.is_finite() {
            return Err(Error::data(&labels, format!("row {row}: cd is not finite")));
        }
        let condition = condcol
            .and_then(|c| rec.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        let path = dir.join(filename);
        if !path.exists() {
            return Err(Error::data(
                &path,
                format!("row {row}: referenced image {filename} is missing"),
            ));
        }
        let image = read_png(&path)?;
        let id = Path::new(filename)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| filename.to_string());
        out.push(
            DatasetRecord::new(id, image, cd, condition)
                .map_err(|e| Error::data(&labels, format!("row {row}: {e}")))?,
        );
    }
    Ok(out)
}

/// Writes records as `images/<id>.png` plus `labels.csv`.
pub fn save_dataset(dir: &Path, records: &[DatasetRecord]) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut csv = String::from("filename,cd,condition\n");
    for r in records {
        let rel = format!("images/{}.png", r.id);
        write_png(&dir.join(&rel), &r.image, 0.0, 1.0)?;
        csv.push_str(&format!(
            "{rel},{},{}\n",
            fmt_f64(r.drag_label),
            r.condition.as_deref().unwrap_or("")
        ));
    }
    let labels = dir.join("labels.csv");
    std::fs::write(&labels, csv).map_err(|e| Error::io(&labels, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_vehicle_dataset;

    #[test]
    fn empty_labels_give_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("labels.csv"), "filename,cd,condition\n").unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn missing_image_is_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("labels.csv"),
            "filename,cd,condition\nimages/ghost.png,0.3,\n",
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("ghost.png"), "{err}");
    }

    #[test]
    fn bad_rows_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("labels.csv"), "filename,cd\nimages/a.png,abc\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        std::fs::write(dir.path().join("labels.csv"), "filename,cd\nimages/a.png,inf\n").unwrap();
        assert!(load_dataset(dir.path()).is_err());
        assert!(load_dataset(&dir.path().join("nope")).is_err());
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let recs = synth_vehicle_dataset(4, 3, 32).unwrap();
        save_dataset(dir.path(), &recs).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.drag_label, b.drag_label);
            assert_eq!(a.condition, b.condition);
            for (p, q) in a.image.as_slice().iter().zip(b.image.as_slice()) {
                assert!((p - q).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
