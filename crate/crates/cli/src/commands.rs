use std::fs;
use std::path::{Path, PathBuf};

use lsd_core::dataio::{load_config, read_bundle, write_bundle, Label, RunConfig, TraceBundle};
use lsd_core::detect::{
    auroc, clustering_accuracy, cross_validate, eval_at_threshold, fit_logistic, kmeans2, pca2, roc_points,
    stratified_folds, tune_threshold, CvReport, EvalSummary, FeatureMatrix, LogisticModel, Standardizer,
};
use lsd_core::projection::{fit, load_projection, save_projection, EpochRecord, StoredProjection};
use lsd_core::stats::{
    layer_sweep, reference_effect_check, render_markdown, ReferenceCheck, StatReport, TTestMode,
};
use lsd_core::synth::{gen_text_pairs, gen_trajectories, write_extractor_input, write_text_pairs, SynthSpec};
use lsd_core::trajectory::{
    metrics_rows, metrics_table, read_layer_rows, read_metrics_rows, write_layer_rows, write_metrics_rows,
    LayerRow, MetricsRow, SampleMetrics, DEFAULT_FEATURES,
};
use lsd_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::run::Run;
use crate::{
    AnalyzeArgs, Cli, DetectArgs, FallbackArg, ModeArg, ScoreArgs, SynthArgs, TrainArgs, ValidateArgs,
};

pub const METRICS_CSV: &str = "metrics.csv";
pub const LAYERS_CSV: &str = "layers.csv";
pub const STATS_JSON: &str = "stats.json";
pub const STATS_MD: &str = "stats.md";
pub const DETECTION_JSON: &str = "detection.json";
pub const MODEL_JSON: &str = "model.json";
pub const ROC_CSV: &str = "roc.csv";
pub const PCA_CSV: &str = "pca.csv";
pub const LOSS_LOG: &str = "loss_log.csv";
pub const SCORES_JSON: &str = "scores.json";

fn open_run(cli: &Cli) -> Result<Run> {
    Run::open(&cli.out_root, cli.run_id.as_deref())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut run = open_run(cli)?;
    let n = usize::try_from(a.n).map_err(|_| Error::config("n", "too large"))?;
    if a.text_pairs {
        let out = a.out.clone().unwrap_or_else(|| run.dir.join("text"));
        ensure_dir(&out)?;
        let pairs = gen_text_pairs(n, a.seed);
        write_text_pairs(&pairs, out.join("text_pairs.jsonl"))?;
        write_extractor_input(&pairs, out.join("extractor_input.jsonl"))?;
        println!("wrote {n} text pairs to {}", out.display());
        return run.finish("synth");
    }
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n_samples: n,
        seed: a.seed,
        n_layers: a.layers.unwrap_or(d.n_layers),
        hidden_dim: a.hidden_dim.unwrap_or(d.hidden_dim),
        truth_dim: a.truth_dim.unwrap_or(d.truth_dim),
        noise_std: a.noise_std.unwrap_or(d.noise_std),
        convergence_rate: a.convergence_rate.unwrap_or(d.convergence_rate),
        drift_rate: a.drift_rate.unwrap_or(d.drift_rate),
        ..d
    };
    let bundle = gen_trajectories(&spec)?;
    let out = a.out.clone().unwrap_or_else(|| run.dir.join("bundle"));
    write_bundle(&bundle, &out)?;
    println!(
        "wrote {} samples ({} factual, {} hallucinated), {} layers x {} dims to {}",
        bundle.samples.len(),
        bundle.count_label(Label::Factual),
        bundle.count_label(Label::Hallucinated),
        bundle.num_layers,
        bundle.hidden_dim,
        out.display()
    );
    run.paths().bundle = Some(out);
    run.finish("synth")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"))
}

pub fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let config = load_config(a.config.config.as_deref(), &a.config.overrides())?;
    let bundle = read_bundle(&a.bundle)?;
    let mut run = open_run(cli)?;
    let outcome = fit(&bundle, &config)?;
    for r in &outcome.history {
        println!(
            "epoch {:>3}  lr {:.3e}  train_loss {:.6}  val_loss {}  val_bacc {}",
            r.epoch,
            r.learning_rate,
            r.train_loss,
            fmt_opt(r.validation_loss),
            fmt_opt(r.validation_balanced_accuracy)
        );
    }
    let out = a.out.clone().unwrap_or_else(|| run.dir.join("projection"));
    save_projection(&outcome.pair, &outcome.history, &outcome.split, &out)?;
    write_csv::<&EpochRecord>(&outcome.history, &run.dir.join(LOSS_LOG))?;
    println!(
        "saved projection ({} train / {} validation samples) to {}",
        outcome.split.train.len(),
        outcome.split.validation.len(),
        out.display()
    );
    run.set_config(&config);
    run.paths().bundle = Some(a.bundle.clone());
    run.paths().projection = Some(out);
    run.finish("train")
}

fn apply_convergence(
    config: &mut RunConfig,
    fraction: Option<f64>,
    fallback: Option<FallbackArg>,
) -> Result<()> {
    if let Some(f) = fraction {
        config.convergence_fraction = f;
    }
    if let Some(f) = fallback {
        config.convergence_fallback = match f {
            FallbackArg::Argmax => lsd_core::dataio::ConvergenceFallback::Argmax,
            FallbackArg::Threshold => lsd_core::dataio::ConvergenceFallback::Threshold,
        };
    }
    config.validate()
}

struct Computed {
    table: Vec<SampleMetrics>,
    rows: Vec<MetricsRow>,
    layers: Vec<LayerRow>,
    config: RunConfig,
}

fn compute_metrics(bundle: &TraceBundle, stored: &StoredProjection, config: RunConfig) -> Result<Computed> {
    let table = metrics_table(&stored.pair, bundle, &config)?;
    let (rows, layers) = metrics_rows(&table, Some(&stored.split));
    Ok(Computed { table, rows, layers, config })
}

#[derive(Serialize)]
struct StatsFile<'a> {
    mode: TTestMode,
    report: &'a StatReport,
    reference_check: &'a ReferenceCheck,
}

pub fn analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<()> {
    let bundle = read_bundle(&a.bundle)?;
    let stored = load_projection(&a.projection)?;
    stored.pair.check_bundle(&bundle)?;
    let mut config = stored.pair.config.clone();
    apply_convergence(&mut config, a.convergence_fraction, a.convergence_fallback)?;
    let mode = match a.mode {
        ModeArg::Welch => TTestMode::Welch,
        ModeArg::Pooled => TTestMode::Pooled,
    };
    let mut run = open_run(cli)?;
    let c = compute_metrics(&bundle, &stored, config)?;
    let report = layer_sweep(&c.table, mode)?;
    let check = reference_effect_check();

    let out = a.out.clone().unwrap_or_else(|| run.dir.join("analysis"));
    ensure_dir(&out)?;
    let metrics_csv = out.join(METRICS_CSV);
    let stats_json = out.join(STATS_JSON);
    write_metrics_rows(&c.rows, &metrics_csv)?;
    write_layer_rows(&c.layers, out.join(LAYERS_CSV))?;
    write_json(&StatsFile { mode, report: &report, reference_check: &check }, &stats_json)?;
    let md = out.join(STATS_MD);
    fs::write(&md, render_markdown(&report, &check)).map_err(|e| Error::io(&md, e))?;

    let failed = c.rows.iter().filter(|r| !r.is_ok()).count();
    println!("{} samples analyzed, {failed} failed", c.rows.len());
    for r in &report.metrics {
        println!(
            "{:<20} t {:>9.3}  p_bonf {:.3e}  d {:>7.3}",
            r.metric_name, r.t_stat, r.p_bonferroni, r.cohens_d
        );
    }
    let worst = report.layers.iter().map(|r| r.p_bonferroni).fold(0.0, f64::max);
    println!("largest per-layer p_bonf over {} layers: {worst:.3e}", report.num_layers);
    println!("wrote {}", out.display());

    run.set_config(&c.config);
    run.paths().bundle = Some(a.bundle.clone());
    run.paths().projection = Some(a.projection.clone());
    run.paths().metrics_csv = Some(metrics_csv);
    run.paths().stat_json = Some(stats_json);
    run.finish("analyze")
}

/// A fitted detector, enough to score new bundles.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub feature_names: Vec<String>,
    pub per_layer: bool,
    pub standardizer: Standardizer,
    pub model: LogisticModel,
    pub threshold: f64,
}

#[derive(Serialize)]
struct Supervised {
    split_source: &'static str,
    n_train: usize,
    n_test: usize,
    threshold: f64,
    held_out: EvalSummary,
    cross_validation: CvReport,
}

#[derive(Serialize)]
struct Clustering {
    n: usize,
    clustering_accuracy: Option<f64>,
    inertia: f64,
    lloyd_iterations: usize,
    cluster_sizes: [usize; 2],
}

#[derive(Serialize)]
struct PcaSummary {
    explained_variance: [f64; 2],
    components: [Vec<f64>; 2],
}

#[derive(Serialize)]
struct DetectionReport {
    features: Vec<String>,
    n_samples: usize,
    n_labelled: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    supervised: Option<Supervised>,
    clustering: Clustering,
    pca: PcaSummary,
}

#[derive(Serialize)]
struct PcaRow<'a> {
    sample_id: &'a str,
    pc1: f64,
    pc2: f64,
    label: &'a str,
}

fn load_rows(a: &DetectArgs) -> Result<(Vec<MetricsRow>, Option<Vec<LayerRow>>)> {
    if let Some(path) = &a.metrics {
        let (csv_path, dir) = if path.is_dir() {
            (path.join(METRICS_CSV), path.clone())
        } else {
            (path.clone(), path.parent().map_or_else(PathBuf::new, Path::to_path_buf))
        };
        let rows = read_metrics_rows(&csv_path)?;
        let layers = if a.per_layer { Some(read_layer_rows(dir.join(LAYERS_CSV))?) } else { None };
        return Ok((rows, layers));
    }
    let (Some(bundle), Some(projection)) = (&a.bundle, &a.projection) else {
        return Err(Error::config("metrics", "give --metrics or both --bundle and --projection"));
    };
    let bundle = read_bundle(bundle)?;
    let stored = load_projection(projection)?;
    let config = stored.pair.config.clone();
    let c = compute_metrics(&bundle, &stored, config)?;
    Ok((c.rows, a.per_layer.then_some(c.layers)))
}

fn has_both(labels: &[u8]) -> bool {
    labels.contains(&0) && labels.contains(&1)
}

/// Held-out split: the projection's own train/validation roles when both
/// sides hold both classes, otherwise one fold of a seeded 5-fold split.
fn supervised_split(fm: &FeatureMatrix, seed: u64) -> Result<(Vec<usize>, Vec<usize>, &'static str)> {
    let train = fm.labelled_indices(Some("train"));
    let test = fm.labelled_indices(Some("validation"));
    let labels_of = |idx: &[usize]| idx.iter().map(|&i| fm.labels[i].unwrap_or(0)).collect::<Vec<u8>>();
    if has_both(&labels_of(&train)) && has_both(&labels_of(&test)) {
        return Ok((train, test, "projection"));
    }
    let all = fm.labelled_indices(None);
    let fold = stratified_folds(&labels_of(&all), 5, seed)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (k, &i) in all.iter().enumerate() {
        if fold[k] == 0 {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, test, "stratified"))
}

fn label_str(l: Option<u8>) -> &'static str {
    match l {
        Some(1) => Label::Hallucinated.as_str(),
        Some(_) => Label::Factual.as_str(),
        None => Label::Unknown.as_str(),
    }
}

pub fn detect(cli: &Cli, a: &DetectArgs) -> Result<()> {
    let (rows, layers) = load_rows(a)?;
    let fm = FeatureMatrix::from_rows(&rows, &DEFAULT_FEATURES, layers.as_deref())?;
    let labelled = fm.labelled_indices(None);
    let (_, all_labels) = fm.select(&labelled);
    if !has_both(&all_labels) {
        return Err(Error::InsufficientData(format!(
            "detection needs both factual and hallucinated samples; found {} labelled rows of one class",
            labelled.len()
        )));
    }
    let mut run = open_run(cli)?;
    let out = a.out.clone().unwrap_or_else(|| run.dir.join("detection"));
    ensure_dir(&out)?;

    let supervised = if a.unsupervised {
        None
    } else {
        let (train_idx, test_idx, source) = supervised_split(&fm, a.seed)?;
        let (xt, yt) = fm.select(&train_idx);
        let (xv, yv) = fm.select(&test_idx);
        let scaler = Standardizer::fit(&xt)?;
        let xt_s = scaler.transform(&xt)?;
        let model = fit_logistic(&xt_s, &yt, a.l2)?;
        let threshold =
            if a.tune_threshold { tune_threshold(&model.predict_risk(&xt_s)?, &yt)? } else { 0.5 };
        let risk = model.predict_risk(&scaler.transform(&xv)?)?;
        let held_out = eval_at_threshold(&risk, &yv, threshold)?;
        write_csv(roc_points(&risk, &yv)?, &out.join(ROC_CSV))?;
        let (xl, yl) = fm.select(&labelled);
        let cv = cross_validate(&xl, &yl, a.folds, a.seed, a.l2, a.tune_threshold)?;
        write_json(
            &ModelFile {
                feature_names: fm.names.clone(),
                per_layer: a.per_layer,
                standardizer: scaler,
                model,
                threshold,
            },
            &out.join(MODEL_JSON),
        )?;
        println!(
            "held-out ({source} split, {} train / {} test): precision {:.4} recall {:.4} F1 {:.4} AUROC {:.4} composite {:.4}",
            train_idx.len(),
            test_idx.len(),
            held_out.precision,
            held_out.recall,
            held_out.f1,
            held_out.auroc,
            held_out.composite
        );
        println!(
            "{}-fold CV: F1 {:.4} ± {:.4}  AUROC {:.4} ± {:.4}",
            cv.k, cv.f1.mean, cv.f1.std, cv.auroc.mean, cv.auroc.std
        );
        Some(Supervised {
            split_source: source,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            threshold,
            held_out,
            cross_validation: cv,
        })
    };

    let all: Vec<usize> = (0..fm.len()).collect();
    let x_std = Standardizer::fit(&fm.rows)?.transform(&fm.rows)?;
    let km = kmeans2(&x_std, None, a.seed)?;
    let assigned: Vec<usize> = labelled.iter().map(|&i| km.assignments[i]).collect();
    let accuracy = clustering_accuracy(&assigned, &all_labels);
    let pca = pca2(&x_std)?;
    write_csv(
        all.iter().map(|&i| PcaRow {
            sample_id: &fm.sample_ids[i],
            pc1: pca.coords[i][0],
            pc2: pca.coords[i][1],
            label: label_str(fm.labels[i]),
        }),
        &out.join(PCA_CSV),
    )?;
    println!("k-means clustering accuracy {accuracy:.4}");

    let report = DetectionReport {
        features: fm.names.clone(),
        n_samples: fm.len(),
        n_labelled: labelled.len(),
        supervised,
        clustering: Clustering {
            n: fm.len(),
            clustering_accuracy: Some(accuracy),
            inertia: km.inertia,
            lloyd_iterations: km.inertia_history.len(),
            cluster_sizes: [
                km.assignments.iter().filter(|&&c| c == 0).count(),
                km.assignments.iter().filter(|&&c| c == 1).count(),
            ],
        },
        pca: PcaSummary { explained_variance: pca.explained_variance, components: pca.components },
    };
    let detection_json = out.join(DETECTION_JSON);
    write_json(&report, &detection_json)?;
    println!("wrote {}", out.display());
    run.paths().detection_json = Some(detection_json);
    run.finish("detect")
}

#[derive(Serialize)]
struct ScoredSample<'a> {
    sample_id: &'a str,
    label: Label,
    status: String,
    risk: Option<f64>,
    predicted: Option<Label>,
    alignment_profile: Option<&'a [f64]>,
}

#[derive(Serialize)]
struct ScoresFile<'a> {
    threshold: f64,
    feature_names: &'a [String],
    auroc: Option<f64>,
    samples: Vec<ScoredSample<'a>>,
}

pub fn score(cli: &Cli, a: &ScoreArgs) -> Result<()> {
    let bundle = read_bundle(&a.bundle)?;
    let stored = load_projection(&a.projection)?;
    let model: ModelFile = read_json(&a.model)?;
    let config = stored.pair.config.clone();
    let c = compute_metrics(&bundle, &stored, config)?;
    let feature_names: Vec<&str> = model
        .feature_names
        .iter()
        .map(String::as_str)
        .filter(|n| !n.starts_with("alignment_layer_"))
        .collect();
    let fm =
        FeatureMatrix::from_rows(&c.rows, &feature_names, model.per_layer.then_some(c.layers.as_slice()))?;
    if fm.names != model.feature_names || model.standardizer.mean.len() != fm.names.len() {
        return Err(Error::ArtifactMismatch(format!(
            "detector expects {} features, bundle yields {}",
            model.feature_names.len(),
            fm.names.len()
        )));
    }
    let mut run = open_run(cli)?;
    let risk = if fm.is_empty() {
        Vec::new()
    } else {
        model.model.predict_risk(&model.standardizer.transform(&fm.rows)?)?
    };

    let mut scored = Vec::with_capacity(c.table.len());
    let mut k = 0;
    for s in &c.table {
        let entry = match &s.metrics {
            Ok(m) => {
                let r = risk[k];
                k += 1;
                ScoredSample {
                    sample_id: &s.sample_id,
                    label: s.label,
                    status: "ok".to_owned(),
                    risk: Some(r),
                    predicted: Some(if r >= model.threshold { Label::Hallucinated } else { Label::Factual }),
                    alignment_profile: Some(&m.alignment_profile),
                }
            }
            Err(e) => ScoredSample {
                sample_id: &s.sample_id,
                label: s.label,
                status: format!("error: {e}"),
                risk: None,
                predicted: None,
                alignment_profile: None,
            },
        };
        scored.push(entry);
    }
    let labelled: Vec<(f64, u8)> =
        scored.iter().filter_map(|s| Some((s.risk?, s.label.as_target()?))).collect();
    let (scores, labels): (Vec<f64>, Vec<u8>) = labelled.into_iter().unzip();
    let auroc = auroc(&scores, &labels).ok();

    let out = a.out.clone().unwrap_or_else(|| run.dir.join(SCORES_JSON));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_json(
        &ScoresFile {
            threshold: model.threshold,
            feature_names: &model.feature_names,
            auroc,
            samples: scored,
        },
        &out,
    )?;
    let flagged = risk.iter().filter(|&&r| r >= model.threshold).count();
    println!("scored {} samples, {flagged} flagged as hallucinated; wrote {}", c.table.len(), out.display());
    run.paths().bundle = Some(a.bundle.clone());
    run.paths().projection = Some(a.projection.clone());
    run.finish("score")
}

pub fn validate(a: &ValidateArgs) -> Result<()> {
    let bundle = read_bundle(&a.bundle)?;
    println!(
        "ok: {} samples ({} factual, {} hallucinated, {} unknown), {} layers, hidden_dim {}, truth_dim {}, model `{}`",
        bundle.samples.len(),
        bundle.count_label(Label::Factual),
        bundle.count_label(Label::Hallucinated),
        bundle.count_label(Label::Unknown),
        bundle.num_layers,
        bundle.hidden_dim,
        bundle.truth_dim().unwrap_or(0),
        bundle.model_name
    );
    Ok(())
}
