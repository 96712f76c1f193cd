//! Benchmark orchestration: run a configured pipeline against a dataset,
//! score accuracy on the unlabeled remainder, repeat, and emit reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Pipeline};
use crate::dataset::{load_csv, CsvSchema, Dataset};
use crate::error::{Error, Result};
use crate::labeling::Role;
use crate::multimetric::run_multimetric;
use crate::pipeline::{
    run_delala, run_lapoleaf, run_random_baseline, LabelOracle, PipelineOutcome, StageTimings,
    SubtreeReport,
};

/// Statistics over repeated runs (identical for deterministic pipelines).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepeatStats {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossSummary {
    pub initial: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

/// Everything one run produces; serializes losslessly to JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub pipeline: String,
    pub n: usize,
    pub d: usize,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub config: BTreeMap<String, String>,
    /// Accuracy on the unlabeled remainder, percent.
    pub accuracy: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub stage_ms: StageTimings,
    pub labeled: Vec<usize>,
    /// (node index, predicted class) for every sample outside the labeled set.
    pub predictions: Vec<(usize, usize)>,
    pub roles: Option<Vec<Role>>,
    pub objective_j: Option<f64>,
    pub label_queries: usize,
    pub granule_count: Option<usize>,
    pub loss_summary: Option<LossSummary>,
    pub per_subtree: Option<Vec<SubtreeReport>>,
    pub repeats: RepeatStats,
    pub warnings: Vec<String>,
}

fn score(full: &Dataset, outcome: &PipelineOutcome) -> (f64, BTreeMap<String, f64>) {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &(node, predicted) in &outcome.predictions {
        if let Some(truth) = full.label(node) {
            total += 1;
            let entry = per_class.entry(truth).or_insert((0, 0));
            entry.1 += 1;
            if truth == predicted {
                correct += 1;
                entry.0 += 1;
            }
        }
    }
    let accuracy = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
    let per_class_accuracy = per_class
        .into_iter()
        .map(|(class, (ok, n))| {
            let name = full.class_names()[class - 1].clone();
            (name, 100.0 * ok as f64 / n as f64)
        })
        .collect();
    (accuracy, per_class_accuracy)
}

fn dispatch(
    view: &Dataset,
    oracle: &mut LabelOracle,
    cfg: &ExperimentConfig,
    repeat: u64,
) -> Result<PipelineOutcome> {
    match cfg.pipeline {
        Pipeline::Delala => run_delala(view, oracle, cfg),
        Pipeline::Multimetric => run_multimetric(view, oracle, cfg),
        Pipeline::Lapoleaf => run_lapoleaf(view, oracle, cfg, repeat),
        Pipeline::RandomBaseline => run_random_baseline(view, oracle, cfg, repeat),
    }
}

/// Execute a configured run end to end. With repeats > 1 the pipeline runs
/// that many times (random pipelines reseed per repeat); the report carries
/// the first run's detail plus accuracy statistics over all of them.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let full = load_csv(&cfg.dataset, &CsvSchema::default())?;
    if full.class_count() == 0 {
        return Err(Error::Data(format!(
            "dataset {} carries no ground-truth labels; benchmarking needs them",
            cfg.dataset.display()
        )));
    }
    let view = full.unlabeled_view();

    let mut accuracies = Vec::with_capacity(cfg.repeats);
    let mut first: Option<(PipelineOutcome, f64, BTreeMap<String, f64>, usize)> = None;
    for rep in 0..cfg.repeats {
        let mut oracle = LabelOracle::new(&full);
        let outcome = dispatch(&view, &mut oracle, cfg, rep as u64)?;
        let (accuracy, per_class) = score(&full, &outcome);
        accuracies.push(accuracy);
        if first.is_none() {
            first = Some((outcome, accuracy, per_class, oracle.queries()));
        }
    }
    let (outcome, accuracy, per_class_accuracy, queries) = first.expect("repeats >= 1");

    // bit-identical repeats have exactly zero spread; the general formula
    // would smear rounding noise over them
    let repeats = if accuracies.windows(2).all(|w| w[0] == w[1]) {
        RepeatStats { mean: accuracies[0], std: 0.0, accuracies }
    } else {
        let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / accuracies.len() as f64;
        RepeatStats { mean, std: var.sqrt(), accuracies }
    };

    let mut per_subtree = outcome.per_subtree.clone();
    if let Some(reports) = per_subtree.as_mut() {
        // local accuracy per leaf over its predicted (non-labeled) members
        let by_node: BTreeMap<usize, usize> = outcome.predictions.iter().copied().collect();
        for rep in reports.iter_mut() {
            let mut ok = 0usize;
            let mut total = 0usize;
            for m in &rep.members {
                if let (Some(&pred), Some(truth)) = (by_node.get(m), full.label(*m)) {
                    total += 1;
                    if pred == truth {
                        ok += 1;
                    }
                }
            }
            rep.local_accuracy =
                (total > 0).then(|| 100.0 * ok as f64 / total as f64);
        }
    }

    let stage_ms = if cfg.canonical { StageTimings::default() } else { outcome.timings.clone() };
    Ok(RunReport {
        dataset: full.name.clone(),
        pipeline: cfg.pipeline.name().to_string(),
        n: full.n(),
        d: full.d(),
        class_count: full.class_count(),
        class_names: full.class_names().to_vec(),
        config: cfg.echo(),
        accuracy,
        per_class_accuracy,
        stage_ms,
        labeled: outcome.labeled.clone(),
        predictions: outcome.predictions.clone(),
        roles: outcome.selection.as_ref().map(|s| s.roles.clone()),
        objective_j: outcome.objective_j,
        label_queries: queries,
        granule_count: outcome.granule_count,
        loss_summary: outcome.loss_history.as_ref().map(|h| LossSummary {
            initial: *h.first().unwrap_or(&0.0),
            final_loss: *h.last().unwrap_or(&0.0),
            iterations: h.len().saturating_sub(1),
        }),
        per_subtree,
        repeats,
        warnings: outcome.warnings.clone(),
    })
}

/// Parameter sweep: one full run per grid value plus a plottable CSV table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: String,
    pub entries: Vec<SweepEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: String,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub report: RunReport,
}

pub fn sweep(base: &ExperimentConfig, parameter: &str, grid: &[String]) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Config("sweep needs at least one grid value".into()));
    }
    let mut entries = Vec::with_capacity(grid.len());
    for value in grid {
        let mut cfg = base.clone();
        cfg.set(parameter, value)?; // unknown parameter surfaces here
        let report = run(&cfg)?;
        entries.push(SweepEntry {
            value: value.clone(),
            accuracy_mean: report.repeats.mean,
            accuracy_std: report.repeats.std,
            report,
        });
    }
    Ok(SweepReport { parameter: parameter.to_string(), entries })
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from("value,accuracy\n");
    for e in &report.entries {
        out.push_str(&format!("{},{}\n", e.value, e.accuracy_mean));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Human,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "human" => Ok(ReportFormat::Human),
            other => Err(Error::Config(format!("unknown format {other:?}; expected json|csv|human"))),
        }
    }
}

pub const REPORT_CSV_HEADER: &str = "dataset,pipeline,n,d,classes,l,accuracy,accuracy_mean,accuracy_std,forest_ms,selection_ms,training_ms,inference_ms,label_queries,granules";

/// Render a report: lossless JSON, a one-line CSV of headline metrics, or a
/// human-readable table.
pub fn emit_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serialization cannot fail")
        }
        ReportFormat::Csv => {
            format!(
                "{}\n{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.3},{:.3},{:.3},{:.3},{},{}\n",
                REPORT_CSV_HEADER,
                report.dataset,
                report.pipeline,
                report.n,
                report.d,
                report.class_count,
                report.labeled.len(),
                report.accuracy,
                report.repeats.mean,
                report.repeats.std,
                report.stage_ms.forest_ms,
                report.stage_ms.selection_ms,
                report.stage_ms.training_ms,
                report.stage_ms.inference_ms,
                report.label_queries,
                report.granule_count.map_or(String::from("-"), |g| g.to_string()),
            )
        }
        ReportFormat::Human => {
            let mut s = String::new();
            s.push_str(&format!(
                "dataset       : {} (n={}, d={}, C={})\n",
                report.dataset, report.n, report.d, report.class_count
            ));
            s.push_str(&format!("pipeline      : {}\n", report.pipeline));
            s.push_str(&format!(
                "accuracy      : {:.2}%  (mean {:.2} ± {:.2} over {} run{})\n",
                report.accuracy,
                report.repeats.mean,
                report.repeats.std,
                report.repeats.accuracies.len(),
                if report.repeats.accuracies.len() == 1 { "" } else { "s" }
            ));
            s.push_str(&format!(
                "labels        : {} used, {} oracle queries\n",
                report.labeled.len(),
                report.label_queries
            ));
            if let Some(g) = report.granule_count {
                s.push_str(&format!("granules      : {g}\n"));
            }
            if let Some(j) = report.objective_j {
                s.push_str(&format!("objective J(L): {j:.6}\n"));
            }
            if let Some(ls) = &report.loss_summary {
                s.push_str(&format!(
                    "training loss : {:.6} -> {:.6} in {} iterations\n",
                    ls.initial, ls.final_loss, ls.iterations
                ));
            }
            s.push_str("stage times   : ");
            s.push_str(&format!(
                "forest {:.1} ms | selection {:.1} ms | training {:.1} ms | inference {:.1} ms\n",
                report.stage_ms.forest_ms,
                report.stage_ms.selection_ms,
                report.stage_ms.training_ms,
                report.stage_ms.inference_ms
            ));
            s.push_str("per-class     :\n");
            for (name, acc) in &report.per_class_accuracy {
                s.push_str(&format!("  {name:<16} {acc:.2}%\n"));
            }
            if !report.warnings.is_empty() {
                s.push_str("warnings      :\n");
                for w in &report.warnings {
                    s.push_str(&format!("  - {w}\n"));
                }
            }
            s
        }
    }
}

/// Selection-only report for annotation workflows.
pub fn write_to(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, text)
                .map_err(|e| Error::Data(format!("cannot write {}: {e}", p.display())))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
