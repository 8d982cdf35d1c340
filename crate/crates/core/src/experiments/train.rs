use serde::Serialize;

use super::config::RunConfig;
use super::output::{Cell, RunDir};
use crate::data::{
    augment, load_dataset, resize_to_224, save_dataset, split_by_id, synth_vehicle_dataset, DatasetRecord,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::surrogate::{evaluate, init_random_features, FeatureMatrix, Metrics, SurrogateModel};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub train: Metrics,
    /// `None` when the split left no test records.
    pub test: Option<Metrics>,
    pub base_train_records: usize,
    pub training_rows: usize,
    pub test_records: usize,
}

/// Fits a random-feature ridge surrogate on the train part of the id-hash
/// split. With `augment`, every training record is replaced by its ten
/// jittered copies. Metrics are computed on the unaugmented train and test
/// records.
pub fn train_surrogate(
    records: &[DatasetRecord],
    lambda: f64,
    use_augment: bool,
    channels: usize,
    seed: u64,
) -> Result<(SurrogateModel, TrainReport)> {
    if records.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let (train_idx, test_idx) = split_by_id(records);
    if train_idx.is_empty() {
        return Err(Error::invalid("the id split left no training records"));
    }
    let extractor = init_random_features(seed, channels)?;
    let dim = extractor.feature_dim();

    let mut rows = 0;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut push = |image: &ImageTensor, label: f64| -> Result<()> {
        data.extend(extractor.extract(&resize_to_224(image)?)?);
        labels.push(label);
        rows += 1;
        Ok(())
    };
    for &i in &train_idx {
        let r = &records[i];
        if use_augment {
            for copy in augment(r, derive_seed(seed, i as u64)) {
                push(&copy.image, copy.drag_label)?;
            }
        } else {
            push(&r.image, r.drag_label)?;
        }
    }
    let x = FeatureMatrix::new(rows, dim, data)?;
    let model = SurrogateModel::fit(extractor, &x, &labels, lambda)?;

    let pairs = |idx: &[usize]| {
        idx.iter()
            .map(|&i| (records[i].image.clone(), records[i].drag_label))
            .collect::<Vec<_>>()
    };
    let train = evaluate(&model, &pairs(&train_idx))?;
    let test = if test_idx.is_empty() {
        None
    } else {
        Some(evaluate(&model, &pairs(&test_idx))?)
    };
    Ok((
        model,
        TrainReport {
            train,
            test,
            base_train_records: train_idx.len(),
            training_rows: rows,
            test_records: test_idx.len(),
        },
    ))
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Vec<DatasetRecord>> {
    let records = synth_vehicle_dataset(cfg.n, cfg.seed, cfg.side)?;
    let dir = RunDir::create(&cfg.out)?;
    save_dataset(dir.root(), &records)?;
    let (lo, hi) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.drag_label), hi.max(r.drag_label))
    });
    #[derive(Serialize)]
    struct Summary {
        records: usize,
        label_min: f64,
        label_max: f64,
    }
    let mut dir = dir;
    dir.path("labels.csv")?;
    dir.path("images")?;
    dir.finish(
        &cfg.command,
        Summary {
            records: records.len(),
            label_min: lo,
            label_max: hi,
        },
    )?;
    Ok(records)
}

fn metric_cells(m: Option<&Metrics>) -> [Cell; 2] {
    match m {
        Some(m) => [m.r_squared.into(), m.mse.into()],
        None => [f64::NAN.into(), f64::NAN.into()],
    }
}

fn warn_undefined(split: &str, m: Option<&Metrics>) {
    match m {
        None => eprintln!("warning: {split} split is empty; its metrics are reported as NaN"),
        Some(m) if !m.r_squared_defined() => {
            eprintln!("warning: all {split} labels are equal; R² is undefined and reported as NaN")
        }
        _ => {}
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let records = load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    let (model, report) = train_surrogate(&records, cfg.lambda, cfg.augment, cfg.channels, cfg.seed)?;
    warn_undefined("train", Some(&report.train));
    warn_undefined("test", report.test.as_ref());

    let mut dir = RunDir::create(&cfg.out)?;
    let model_path = match &cfg.model {
        Some(p) => p.clone(),
        None => dir.path("model.json")?,
    };
    model.save(&model_path)?;
    let [tr_r2, tr_mse] = metric_cells(Some(&report.train));
    let [te_r2, te_mse] = metric_cells(report.test.as_ref());
    dir.csv(
        "metrics.csv",
        &["train_r2", "train_mse", "test_r2", "test_mse"],
        vec![vec![tr_r2, tr_mse, te_r2, te_mse]],
    )?;
    dir.finish(&cfg.command, &report)?;
    Ok(report)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Metrics> {
    let model = SurrogateModel::load(cfg.require(&cfg.model, "model")?)?;
    let records = load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    if records.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut rows = Vec::with_capacity(records.len());
    let mut preds = Vec::with_capacity(records.len());
    for r in &records {
        let p = model.predict_drag(&r.image)?;
        rows.push(vec![r.id.clone().into(), r.drag_label.into(), p.into()]);
        preds.push(p);
    }
    let labels: Vec<f64> = records.iter().map(|r| r.drag_label).collect();
    let m = crate::surrogate::regression_metrics(&preds, &labels)?;
    warn_undefined("evaluation", Some(&m));
    let mut dir = RunDir::create(&cfg.out)?;
    dir.csv("predictions.csv", &["id", "label", "prediction"], rows)?;
    dir.csv(
        "metrics.csv",
        &["n", "r2", "mse"],
        vec![vec![m.n.into(), m.r_squared.into(), m.mse.into()]],
    )?;
    dir.finish(&cfg.command, m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmentation_multiplies_rows_by_ten() {
        let recs = synth_vehicle_dataset(12, 3, 32).unwrap();
        let (_, plain) = train_surrogate(&recs, 10.0, false, 2, 0).unwrap();
        let (_, aug) = train_surrogate(&recs, 10.0, true, 2, 0).unwrap();
        assert_eq!(plain.training_rows, plain.base_train_records);
        assert_eq!(aug.training_rows, 10 * aug.base_train_records);
    }

    #[test]
    fn single_label_dataset_reports_undefined_r2() {
        let recs: Vec<DatasetRecord> = synth_vehicle_dataset(6, 1, 32)
            .unwrap()
            .into_iter()
            .map(|mut r| {
                r.drag_label = 0.3;
                r
            })
            .collect();
        let (_, rep) = train_surrogate(&recs, 10.0, false, 2, 0).unwrap();
        assert!(!rep.train.r_squared_defined());
        assert!(rep.train.mse < 1e-20);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(train_surrogate(&[], 10.0, false, 2, 0).is_err());
    }
}
