use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{eval_at_threshold, tune_threshold, EvalSummary};
use super::logistic::fit_logistic;
use super::Standardizer;
use crate::error::{Error, Result};
use crate::numerics::{mean, population_std, Matrix, Rng};

const FOLD_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<EvalSummary>,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub auroc: MeanStd,
    pub composite: MeanStd,
}

/// Fold index per row: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config("folds", "need at least 2 folds"));
    }
    let mut rng = Rng::new(seed).fork(FOLD_STREAM);
    let mut fold = vec![0; labels.len()];
    for (class, name) in [(0u8, "factual"), (1u8, "hallucinated")] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::InsufficientData(format!(
                "class `{name}` has {} samples, fewer than {k} folds",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        for (pos, &i) in idx.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

fn subset(x: &Matrix, y: &[u8], rows: &[usize]) -> (Matrix, Vec<u8>) {
    let mut data = Vec::with_capacity(rows.len() * x.cols());
    for &i in rows {
        data.extend_from_slice(x.row(i));
    }
    (
        Matrix::from_vec(rows.len(), x.cols(), data).expect("consistent shape"),
        rows.iter().map(|&i| y[i]).collect(),
    )
}

/// Stratified k-fold evaluation of the logistic detector on raw features;
/// standardization is refit on each fold's training rows.
pub fn cross_validate(x: &Matrix, y: &[u8], k: usize, seed: u64, l2: f64, tune: bool) -> Result<CvReport> {
    let fold = stratified_folds(y, k, seed)?;
    let folds = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
            let (xt, yt) = subset(x, y, &train);
            let (xv, yv) = subset(x, y, &test);
            let scaler = Standardizer::fit(&xt)?;
            let xt = scaler.transform(&xt)?;
            let model = fit_logistic(&xt, &yt, l2)?;
            let threshold = if tune { tune_threshold(&model.predict_risk(&xt)?, &yt)? } else { 0.5 };
            eval_at_threshold(&model.predict_risk(&scaler.transform(&xv)?)?, &yv, threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    let agg = |get: fn(&EvalSummary) -> f64| {
        let v: Vec<f64> = folds.iter().map(get).collect();
        MeanStd { mean: mean(&v), std: population_std(&v) }
    };
    Ok(CvReport {
        k,
        precision: agg(|e| e.precision),
        recall: agg(|e| e.recall),
        f1: agg(|e| e.f1),
        auroc: agg(|e| e.auroc),
        composite: agg(|e| e.composite),
        folds,
    })
}
