//! Run-directory helpers shared by the subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use facmix::criteria::{bic_mcmc, bicm, CriteriaInput};
use facmix::error::{Error, Result};
use facmix::mcmc::{ChainTrace, ModelKind};
use facmix::posthoc::{summarize, PosteriorSummary, SummaryOptions};

/// Grid-level metadata written next to `comparison.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub n_models: usize,
    pub total_wall_time_s: f64,
    pub criterion: String,
    /// Relative path of the best member's directory.
    pub best: String,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub clusters: Option<usize>,
    pub factors: Option<usize>,
    pub criterion: String,
    pub value: f64,
}

/// The criterion a model kind is compared under: BIC-MCMC when both the
/// cluster and factor counts are finite and fixed, BICM otherwise.
pub fn criterion_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Fa | ModelKind::Mfa => "bic-mcmc",
        _ => "bicm",
    }
}

pub fn criterion_value(trace: &ChainTrace) -> Result<f64> {
    let input = CriteriaInput {
        loglik: trace.loglik_samples(),
        n_obs: trace.meta.n,
        p: trace.meta.p,
        n_clusters: trace.meta.g_init,
        q: trace.meta.q_fixed,
    };
    match trace.meta.kind {
        ModelKind::Fa | ModelKind::Mfa => bic_mcmc(&input),
        _ => bicm(&input),
    }
}

/// Refuse to reuse a non-empty directory unless forced.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Validation(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(())
}

/// Resolve a run directory to the directory holding the trace files: itself,
/// or the best grid member recorded in `grid.json`.
pub fn resolve_trace_dir(dir: &Path) -> Result<PathBuf> {
    if dir.join("trace.meta.json").exists() {
        return Ok(dir.to_path_buf());
    }
    let grid_path = dir.join("grid.json");
    if grid_path.exists() {
        let text = std::fs::read_to_string(&grid_path)
            .map_err(|e| Error::io(grid_path.display().to_string(), e))?;
        let report: GridReport =
            serde_json::from_str(&text).map_err(|e| Error::Trace(format!("grid.json: {e}")))?;
        let best = dir.join(&report.best);
        if best.join("trace.meta.json").exists() {
            return Ok(best);
        }
        return Err(Error::Trace(format!(
            "grid.json points at {} but no trace found there",
            best.display()
        )));
    }
    Err(Error::Trace(format!("{} holds neither trace files nor grid.json", dir.display())))
}

/// Load (or compute and persist) the summary of the trace in `dir`.
pub fn load_or_summarise(dir: &Path) -> Result<PosteriorSummary> {
    let summary_path = dir.join("summary.json");
    if summary_path.exists() {
        let text = std::fs::read_to_string(&summary_path)
            .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
        if let Ok(s) = serde_json::from_str(&text) {
            return Ok(s);
        }
    }
    let trace = ChainTrace::load(dir)?;
    let summary = summarize(&trace, &SummaryOptions::default())?;
    write_summary_files(dir, &trace, &summary)?;
    Ok(summary)
}

/// Write `summary.json` and the plot-ready CSV exports.
pub fn write_summary_files(dir: &Path, trace: &ChainTrace, summary: &PosteriorSummary) -> Result<()> {
    let summary_path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Trace(format!("summary serialisation: {e}")))?;
    std::fs::write(&summary_path, json)
        .map_err(|e| Error::io(summary_path.display().to_string(), e))?;

    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| Error::io(plots.display().to_string(), e))?;

    let mut out = String::from("cluster,q,frequency\n");
    for (c, freq) in summary.q_frequencies.iter().enumerate() {
        for (q, count) in freq {
            out.push_str(&format!("{},{q},{count}\n", c + 1));
        }
    }
    let path = plots.join("q_barchart.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut out = String::from("cluster,variable,factor,value\n");
    for (c, lam) in summary.posterior_mean_loadings.iter().enumerate() {
        for (j, row) in lam.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{},{v}\n", c + 1, j + 1, k + 1));
            }
        }
    }
    let path = plots.join("loadings_heatmap.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut out = String::from("g0,frequency\n");
    for (g, count) in &summary.g_distribution {
        out.push_str(&format!("{g},{count}\n"));
    }
    let path = plots.join("g0_frequency.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;

    let _ = trace;
    Ok(())
}

/// Metrics against supplied truth labels, persisted as `metrics.json` +
/// `confusion.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub adjusted_rand: f64,
    pub error_rate: f64,
    pub n: usize,
}

pub fn write_metrics(
    dir: &Path,
    report: &MetricsReport,
    confusion: &[Vec<usize>],
) -> Result<()> {
    let path = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Trace(format!("metrics serialisation: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut out = String::new();
    for row in confusion {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let path = dir.join("confusion.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
