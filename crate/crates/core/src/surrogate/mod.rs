//! The drag surrogate `φ_drag`: frozen random convolutional features, a
//! ridge-regression head, its analytic input gradient and evaluation.

pub mod features;
pub mod model;
pub mod precomputed;
pub mod resize;
pub mod ridge;

pub use features::{init_random_features, ConvGeometry, ExtractorSpec, RandomConvExtractor};
pub use model::{
    evaluate, fit_from_precomputed, regression_metrics, DragObjective, FeatureSource, Metrics, QuadraticObjective,
    SurrogateModel,
};
pub use precomputed::PrecomputedFeatureTable;
pub use resize::{resize, BilinearResize};
pub use ridge::{fit_ridge, ridge_solve, FeatureMatrix, FeatureNorm, Preprocess, RidgeFit};
