//! End-to-end pipeline: load or generate data, split, preprocess, fit the
//! four classifiers, evaluate on the held-out rows and write every report.
//!
//! Each failure is tagged with the [`Stage`] it came from; the CLI maps
//! stages to exit codes.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error as ThisError;

use crate::artifact::{save_model, ModelArtifact, ModelKind, Provenance, TrainedModel};
use crate::boosting::fit_gbc;
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{self, summarize, ColumnMap, Dataset, DatasetSummary, FeatureKind, Outcome};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_scores, metrics_csv, render_report, roc_csv, EvaluationRow, RocCurve};
use crate::exec::Exec;
use crate::forest::{importance_csv, oob_importance, ImportanceRanking};
use crate::forest::fit_forest;
use crate::logistic::{fit_logistic, inference_csv, wald_report, InferenceRow};
use crate::naive_bayes::fit_nb;
use crate::preprocess::{detect_outliers, split_indices, winsorize, OutlierReport, Preprocessor, SplitIndices};
use crate::rng::derive_seed;
use crate::synthetic::generate_synthetic;

// Independent seed streams derived from the run seed.
const DATA_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const FOREST_STREAM: u64 = 3;
const IMPORTANCE_STREAM: u64 = 4;
const BOOST_STREAM: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Split,
    Preprocess,
    Fit,
    Evaluate,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Split => "split",
            Stage::Preprocess => "preprocess",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
            Stage::Output => "output",
        }
    }

    /// Process exit code for a failure in this stage. Codes 1 and 2 stay
    /// free for generic and command-line usage errors.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 10,
            Stage::Data => 11,
            Stage::Split => 12,
            Stage::Preprocess => 13,
            Stage::Fit => 14,
            Stage::Evaluate => 15,
            Stage::Output => 16,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, ThisError)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Reads the configured CSV or generates the synthetic cohort.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.data {
        DataSource::Csv(path) => load_csv(path),
        DataSource::Synthetic(spec) => generate_synthetic(spec, derive_seed(config.seed, &[DATA_STREAM])),
    }
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    data::parse_csv(std::io::BufReader::new(file), &ColumnMap::identity())
}

/// Fits the preprocessor and all four models on `train`.
///
/// Returns artifacts in report order. The forest artifact carries the
/// out-of-bag importance ranking; the logistic artifact carries the Wald
/// table unless the information matrix is singular.
pub fn train_models(train: &Dataset, config: &ExperimentConfig) -> StageResult<Vec<ModelArtifact>> {
    if !train.has_both_classes() {
        return Err(Error::SingleClass).at(Stage::Preprocess);
    }
    let preprocessor = Preprocessor::fit(train).at(Stage::Preprocess)?;
    let x = preprocessor.transform(train).at(Stage::Preprocess)?;
    let y = train.targets();
    let names: Vec<String> = train.feature_names().iter().map(|s| s.to_string()).collect();
    let kinds: Vec<FeatureKind> = train.features().iter().map(|f| f.kind).collect();
    let exec = config.exec;

    let fitted: Vec<Result<TrainedModel>> = exec.map(ModelKind::ALL.len(), |k| match ModelKind::ALL[k] {
        ModelKind::Gbc => fit_gbc(&x, &y, &config.boosting, derive_seed(config.seed, &[BOOST_STREAM]), exec)
            .map(TrainedModel::Boosting),
        ModelKind::Rf => fit_forest(&x, &y, &config.forest, derive_seed(config.seed, &[FOREST_STREAM]), exec)
            .map(TrainedModel::Forest),
        ModelKind::Nb => fit_nb(&x, &y, &kinds).map(TrainedModel::NaiveBayes),
        ModelKind::Lr => fit_logistic(&x, &y, &config.logistic).map(TrainedModel::Logistic),
    });
    let models = fitted.into_iter().collect::<Result<Vec<_>>>().at(Stage::Fit)?;

    let provenance = Provenance {
        seed: config.seed,
        n_train: train.len(),
        config: config.to_reproducible_text(),
    };
    let mut artifacts = Vec::with_capacity(models.len());
    for model in models {
        let mut importance = None;
        let mut inference = None;
        match &model {
            TrainedModel::Forest(forest) => {
                let seed = derive_seed(config.seed, &[IMPORTANCE_STREAM]);
                importance = Some(oob_importance(forest, &x, &y, &names, seed, exec).at(Stage::Fit)?);
            }
            TrainedModel::Logistic(lr) => {
                if !lr.training.converged {
                    log::warn!(
                        "logistic regression stopped after {} iterations without meeting the gradient tolerance",
                        lr.training.iterations
                    );
                }
                inference = match wald_report(lr, &x, &names) {
                    Ok(rows) => Some(rows),
                    Err(Error::SingularInformation) => {
                        log::warn!("logistic inference skipped: observed information is singular");
                        None
                    }
                    Err(e) => return Err(e).at(Stage::Fit),
                };
            }
            _ => {}
        }
        artifacts.push(ModelArtifact {
            kind: model.kind(),
            features: train.features().to_vec(),
            preprocessor: preprocessor.clone(),
            model,
            provenance: provenance.clone(),
            importance,
            inference,
        });
    }
    Ok(artifacts)
}

/// Fits only the forest on `ds` and ranks its features by out-of-bag
/// permutation importance, with the same seed streams as [`train_models`].
pub fn forest_importance(ds: &Dataset, config: &ExperimentConfig) -> StageResult<ImportanceRanking> {
    if !ds.has_both_classes() {
        return Err(Error::SingleClass).at(Stage::Preprocess);
    }
    let x = Preprocessor::fit(ds)
        .and_then(|p| p.transform(ds))
        .at(Stage::Preprocess)?;
    let y = ds.targets();
    let names: Vec<String> = ds.feature_names().iter().map(|s| s.to_string()).collect();
    let forest = fit_forest(&x, &y, &config.forest, derive_seed(config.seed, &[FOREST_STREAM]), config.exec)
        .at(Stage::Fit)?;
    oob_importance(&forest, &x, &y, &names, derive_seed(config.seed, &[IMPORTANCE_STREAM]), config.exec)
        .at(Stage::Fit)
}

/// Scores every row of `ds` with the artifact, in row order.
pub fn score_dataset(artifact: &ModelArtifact, ds: &Dataset, exec: Exec) -> Result<Vec<f64>> {
    exec.map(ds.len(), |i| artifact.predict_record(ds.row(i)))
        .into_iter()
        .collect()
}

/// One table row and ROC curve per artifact, in the given order.
pub fn evaluate_artifacts(
    artifacts: &[ModelArtifact],
    ds: &Dataset,
    threshold: f64,
    exec: Exec,
) -> Result<Vec<(ModelKind, EvaluationRow, Option<RocCurve>)>> {
    artifacts
        .iter()
        .map(|a| {
            let scores = score_dataset(a, ds, exec)?;
            let (row, curve) = evaluate_scores(a.kind.display_name(), &scores, ds.labels(), threshold)?;
            Ok((a.kind, row, curve))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub n_rows: usize,
    pub split: SplitIndices,
    /// Per-class statistics of the training split before imputation.
    pub train_summary: DatasetSummary,
    /// MAD flags on the training split; indices are positions in the training split.
    pub outliers: OutlierReport,
    pub evaluations: Vec<(ModelKind, EvaluationRow, Option<RocCurve>)>,
    pub artifacts: Vec<ModelArtifact>,
}

impl ExperimentReport {
    pub fn rows(&self) -> Vec<EvaluationRow> {
        self.evaluations.iter().map(|(_, r, _)| r.clone()).collect()
    }

    pub fn artifact(&self, kind: ModelKind) -> Option<&ModelArtifact> {
        self.artifacts.iter().find(|a| a.kind == kind)
    }

    pub fn importance(&self) -> Option<&ImportanceRanking> {
        self.artifact(ModelKind::Rf)?.importance.as_ref()
    }

    pub fn inference(&self) -> Option<&[InferenceRow]> {
        self.artifact(ModelKind::Lr)?.inference.as_deref()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let source = match &self.config.data {
            DataSource::Csv(p) => format!("file {}", p.display()),
            DataSource::Synthetic(spec) => format!("synthetic cohort, n = {}", spec.n),
        };
        let _ = writeln!(out, "Kidney transplant/discard model comparison\n");
        let _ = writeln!(out, "data:       {source}");
        let _ = writeln!(out, "seed:       {}", self.config.seed);
        let _ = writeln!(
            out,
            "split:      {} train / {} test ({})",
            self.split.train.len(),
            self.split.test.len(),
            if self.config.stratify { "stratified" } else { "unstratified" }
        );
        let _ = writeln!(out, "threshold:  {}\n", self.config.threshold);

        let _ = writeln!(
            out,
            "Training split: {} transplanted, {} discarded",
            self.train_summary.n_transplanted, self.train_summary.n_discarded
        );
        let _ = writeln!(
            out,
            "{:<16}{:>8}{:>16}{:>16}{:>10}",
            "feature", "missing", "mean (transp.)", "mean (disc.)", "outliers"
        );
        for f in &self.train_summary.features {
            let flagged = self
                .outliers
                .entries
                .iter()
                .find(|e| e.feature == f.name)
                .map_or_else(|| "-".to_string(), |e| e.flagged.len().to_string());
            let mean = |m: Option<f64>| m.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{:<16}{:>8}{:>16}{:>16}{:>10}",
                f.name,
                f.missing,
                mean(f.transplanted.mean),
                mean(f.discarded.mean),
                flagged
            );
        }
        let _ = writeln!(
            out,
            "Outliers use MAD cutoff {} and are {}.\n",
            self.outliers.cutoff,
            if self.config.winsorize { "winsorized" } else { "reported only" }
        );

        out.push_str("Held-out evaluation\n");
        out.push_str(&render_report(&self.rows()));
        out.push_str("AUC (ROC) integrates the full ROC curve; Balanced Acc. is (sensitivity + specificity) / 2 at the threshold.\n\n");

        if let Some(imp) = self.importance() {
            let _ = writeln!(
                out,
                "Random forest out-of-bag permutation importance ({} trees)",
                imp.trees_used
            );
            let _ = writeln!(out, "{:>4}  {:<16}{:>12}{:>12}", "rank", "feature", "importance", "std. error");
            for e in imp.ranked() {
                let _ = writeln!(
                    out,
                    "{:>4}  {:<16}{:>12.5}{:>12.5}",
                    e.rank, e.feature, e.importance, e.std_error
                );
            }
            out.push('\n');
        }

        if let Some(lr) = self.artifact(ModelKind::Lr) {
            if let TrainedModel::Logistic(m) = &lr.model {
                let _ = writeln!(
                    out,
                    "Logistic regression: {} iterations, {}converged, final loss {:.6}",
                    m.training.iterations,
                    if m.training.converged { "" } else { "not " },
                    m.training.final_loss
                );
            }
        }
        match self.inference() {
            Some(rows) => {
                let _ = writeln!(
                    out,
                    "{:<16}{:>10}{:>10}{:>10}{:>22}{:>12}",
                    "feature", "coef", "std. err", "p", "95% CI", "odds ratio"
                );
                for r in rows {
                    let ci = format!("({:.3}, {:.3})", r.ci_low, r.ci_high);
                    let _ = writeln!(
                        out,
                        "{:<16}{:>10.4}{:>10.4}{:>10.4}{:>22}{:>12.4}{}",
                        r.feature,
                        r.coefficient,
                        r.std_error,
                        r.p_value,
                        ci,
                        r.odds_ratio,
                        if r.important { "  *" } else { "" }
                    );
                }
                out.push_str("* p < 0.05\n");
            }
            None => out.push_str("Wald inference unavailable (singular information matrix).\n"),
        }
        out
    }

    /// `feature,train_row,value,median,spread` for every flagged value.
    pub fn outliers_csv(&self, train: &Dataset) -> String {
        let mut out = String::from("feature,train_row,value,median,spread\n");
        for e in &self.outliers.entries {
            let j = train.feature_index(&e.feature).expect("report built from this dataset");
            for &i in &e.flagged {
                let v = train.row(i)[j].expect("flagged values are present");
                let _ = writeln!(out, "{},{},{},{},{}", e.feature, i, v, e.median, e.spread);
            }
        }
        out
    }

    /// Writes every export under `dir` and returns the paths written.
    pub fn write(&self, dir: &Path, train: &Dataset) -> Result<Vec<PathBuf>> {
        let models_dir = dir.join("models");
        fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: &str, contents: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        put("report.txt", self.render_text())?;
        put("metrics.csv", metrics_csv(&self.rows()))?;
        for (kind, _, curve) in &self.evaluations {
            if let Some(curve) = curve {
                put(&format!("roc_{}.csv", kind.slug()), roc_csv(kind.display_name(), curve))?;
            }
        }
        if let Some(imp) = self.importance() {
            put("importance.csv", importance_csv(imp))?;
        }
        put("inference.csv", inference_csv(self.inference().unwrap_or(&[])))?;
        put("outliers.csv", self.outliers_csv(train))?;
        put("config.txt", self.config.to_reproducible_text())?;
        for a in &self.artifacts {
            let path = models_dir.join(a.kind.file_name());
            save_model(a, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Runs every stage except writing outputs. Also returns the (possibly
/// winsorized) training split.
pub fn run_pipeline(config: &ExperimentConfig) -> StageResult<(ExperimentReport, Dataset)> {
    config.validate().at(Stage::Config)?;
    let ds = load_dataset(config).at(Stage::Data)?;
    let labels: Option<&[Outcome]> = config.stratify.then(|| ds.labels());
    let split = split_indices(
        ds.len(),
        config.train_fraction,
        derive_seed(config.seed, &[SPLIT_STREAM]),
        labels,
    )
    .at(Stage::Split)?;
    let mut train = ds.subset(&split.train);
    let test = ds.subset(&split.test);

    let train_summary = summarize(&train).at(Stage::Preprocess)?;
    let outliers = detect_outliers(&train, config.outlier_cutoff).at(Stage::Preprocess)?;
    if config.winsorize {
        // Training data only: served models see raw inputs, so the test
        // split must too.
        train = winsorize(&train, &outliers);
    }

    let artifacts = train_models(&train, config)?;
    let evaluations =
        evaluate_artifacts(&artifacts, &test, config.threshold, config.exec).at(Stage::Evaluate)?;
    let report = ExperimentReport {
        config: config.clone(),
        n_rows: ds.len(),
        split,
        train_summary,
        outliers,
        evaluations,
        artifacts,
    };
    Ok((report, train))
}

/// Runs the pipeline and writes all outputs under `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> StageResult<ExperimentReport> {
    let (report, train) = run_pipeline(config)?;
    report.write(&config.out_dir, &train).at(Stage::Output)?;
    Ok(report)
}
