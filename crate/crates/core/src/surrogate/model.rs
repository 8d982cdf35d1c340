use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{ExtractorSpec, RandomConvExtractor};
use super::precomputed::PrecomputedFeatureTable;
use super::resize::BilinearResize;
use super::ridge::{fit_ridge, FeatureMatrix, FeatureNorm, Preprocess, RidgeFit};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// A differentiable scalar objective over images, used to steer sampling.
pub trait DragObjective: Send + Sync {
    fn value(&self, x: &ImageTensor) -> Result<f64>;
    fn gradient(&self, x: &ImageTensor) -> Result<ImageTensor>;
}

/// `scale·‖x − center‖²`
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub center: ImageTensor,
    pub scale: f64,
}

impl DragObjective for QuadraticObjective {
    fn value(&self, x: &ImageTensor) -> Result<f64> {
        Ok(self.scale * x.dist_sq(&self.center)?)
    }

    fn gradient(&self, x: &ImageTensor) -> Result<ImageTensor> {
        x.zip_with(&self.center, |a, c| 2.0 * self.scale * (a - c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    RandomConv(RandomConvExtractor),
    /// Embeddings supplied from a file; these models cannot see images.
    Precomputed {
        dim: usize,
    },
}

impl FeatureSource {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSource::RandomConv(e) => e.feature_dim(),
            FeatureSource::Precomputed { dim } => *dim,
        }
    }
}

/// Frozen feature extractor plus ridge-fitted linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    source: FeatureSource,
    head: RidgeFit,
}

impl SurrogateModel {
    pub fn new(source: FeatureSource, head: RidgeFit) -> Result<Self> {
        let d = source.dim();
        if head.weights.len() != d || head.norm.mean.len() != d || head.norm.std.len() != d {
            return Err(Error::invalid(format!(
                "head has {} weights for {d} features",
                head.weights.len()
            )));
        }
        if head
            .weights
            .iter()
            .chain(&head.norm.mean)
            .chain(&head.norm.std)
            .chain(std::iter::once(&head.bias))
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("surrogate head".into()));
        }
        Ok(Self { source, head })
    }

    /// Fits a head on random-conv features of already extracted rows.
    pub fn fit(extractor: RandomConvExtractor, features: &FeatureMatrix, labels: &[f64], lambda: f64) -> Result<Self> {
        if features.cols() != extractor.feature_dim() {
            return Err(Error::invalid("feature matrix width does not match extractor"));
        }
        let head = fit_ridge(features, labels, lambda, Preprocess::Standardize)?;
        Self::new(FeatureSource::RandomConv(extractor), head)
    }

    pub fn source(&self) -> &FeatureSource {
        &self.source
    }

    pub fn head(&self) -> &RidgeFit {
        &self.head
    }

    pub fn extractor(&self) -> Result<&RandomConvExtractor> {
        match &self.source {
            FeatureSource::RandomConv(e) => Ok(e),
            FeatureSource::Precomputed { .. } => Err(Error::NotGuidable(
                "the model reads precomputed embeddings and has no image gradient".into(),
            )),
        }
    }

    pub fn is_guidable(&self) -> bool {
        matches!(self.source, FeatureSource::RandomConv(_))
    }

    /// Raw (unnormalized) features of an image of any size.
    pub fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let ex = self.extractor()?;
        let prepared = prepare(ex, image)?.forward(image)?;
        ex.extract(&prepared)
    }

    pub fn predict_features(&self, raw: &[f64]) -> Result<f64> {
        if raw.len() != self.source.dim() {
            return Err(Error::invalid(format!(
                "feature vector has length {}, expected {}",
                raw.len(),
                self.source.dim()
            )));
        }
        Ok(self.head.predict(raw))
    }

    /// `w·f̃(resize(image)) + b`
    pub fn predict_drag(&self, image: &ImageTensor) -> Result<f64> {
        self.predict_features(&self.features(image)?)
    }

    /// Analytic `∇φ` with respect to the (unresized) input image.
    pub fn grad_drag(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let ex = self.extractor()?;
        let resize = prepare(ex, image)?;
        let prepared = resize.forward(image)?;
        let feature_grad = self.head.raw_weights();
        if feature_grad.iter().all(|&w| w == 0.0) {
            return Ok(ImageTensor::zeros(image.channels(), image.height(), image.width()));
        }
        let g = ex.backward(&prepared, &feature_grad)?;
        resize.adjoint(&g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile::from_model(self);
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| Error::data(path, format!("invalid model file: {e}")))?;
        file.into_model().map_err(|e| Error::data(path, e.to_string()))
    }
}

/// Resize from the image's spatial size to the extractor's input side.
fn prepare(ex: &RandomConvExtractor, image: &ImageTensor) -> Result<BilinearResize> {
    let (c, side, _) = ex.input_shape();
    if image.channels() != c {
        return Err(Error::ShapeMismatch {
            expected: ex.input_shape(),
            got: image.shape(),
        });
    }
    BilinearResize::new(image.height(), image.width(), side, side)
}

impl DragObjective for SurrogateModel {
    fn value(&self, x: &ImageTensor) -> Result<f64> {
        self.predict_drag(x)
    }

    fn gradient(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.grad_drag(x)
    }
}

pub const MODEL_FORMAT: &str = "dragguide-surrogate";
pub const MODEL_VERSION: u32 = 1;
/// Floats are written as shortest round-trip decimals, so a reload is exact.
pub const FLOAT_ENCODING: &str = "f64-shortest-roundtrip";

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ExtractorEntry {
    RandomConv(ExtractorSpec),
    Precomputed { dim: usize },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    float_encoding: String,
    extractor: ExtractorEntry,
    lambda: f64,
    preprocess: Preprocess,
    feature_norm: FeatureNorm,
    head_weights: Vec<f64>,
    head_bias: f64,
}

impl ModelFile {
    fn from_model(m: &SurrogateModel) -> Self {
        let extractor = match &m.source {
            FeatureSource::RandomConv(e) => ExtractorEntry::RandomConv(*e.spec()),
            FeatureSource::Precomputed { dim } => ExtractorEntry::Precomputed { dim: *dim },
        };
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            float_encoding: FLOAT_ENCODING.into(),
            extractor,
            lambda: m.head.lambda,
            preprocess: m.head.preprocess,
            feature_norm: m.head.norm.clone(),
            head_weights: m.head.weights.clone(),
            head_bias: m.head.bias,
        }
    }

    fn into_model(self) -> Result<SurrogateModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unexpected format tag {:?}", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", self.version)));
        }
        if self.float_encoding != FLOAT_ENCODING {
            return Err(Error::Format(format!(
                "unsupported float encoding {:?}",
                self.float_encoding
            )));
        }
        let source = match self.extractor {
            ExtractorEntry::RandomConv(spec) => FeatureSource::RandomConv(RandomConvExtractor::from_spec(spec)?),
            ExtractorEntry::Precomputed { dim } => FeatureSource::Precomputed { dim },
        };
        SurrogateModel::new(
            source,
            RidgeFit {
                weights: self.head_weights,
                bias: self.head_bias,
                norm: self.feature_norm,
                lambda: self.lambda,
                preprocess: self.preprocess,
            },
        )
    }
}

/// Fits a head on externally supplied embeddings. The resulting model is
/// not guidable.
pub fn fit_from_precomputed(
    table: &PrecomputedFeatureTable,
    labels: &[(String, f64)],
    lambda: f64,
    preprocess: Preprocess,
) -> Result<SurrogateModel> {
    let mut data = Vec::with_capacity(labels.len() * table.dim());
    for (id, _) in labels {
        let row = table
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no precomputed features for id {id:?}")))?;
        data.extend_from_slice(row);
    }
    let x = FeatureMatrix::new(labels.len(), table.dim(), data)?;
    let y: Vec<f64> = labels.iter().map(|(_, l)| *l).collect();
    let head = fit_ridge(&x, &y, lambda, preprocess)?;
    SurrogateModel::new(FeatureSource::Precomputed { dim: table.dim() }, head)
}

/// Table-1 style regression metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// `NaN` when all labels are equal (R² undefined).
    pub r_squared: f64,
    pub mse: f64,
    pub n: usize,
}

impl Metrics {
    pub fn r_squared_defined(&self) -> bool {
        !self.r_squared.is_nan()
    }
}

pub fn regression_metrics(predictions: &[f64], labels: &[f64]) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::invalid("prediction and label counts differ"));
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let ss_res: f64 = predictions.iter().zip(labels).map(|(p, y)| (y - p) * (y - p)).sum();
    let ss_tot: f64 = labels.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN };
    Ok(Metrics {
        r_squared,
        mse: ss_res / n,
        n: labels.len(),
    })
}

pub fn evaluate(model: &SurrogateModel, dataset: &[(ImageTensor, f64)]) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let preds = dataset
        .iter()
        .map(|(img, _)| model.predict_drag(img))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = dataset.iter().map(|(_, y)| *y).collect();
    regression_metrics(&preds, &labels)
}
