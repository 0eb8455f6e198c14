use std::path::{Path, PathBuf};

use facmix::error::{Error, Result};
use facmix::mcmc::ChainTrace;

use crate::runs::{load_or_summarise, resolve_trace_dir, GridReport, MetricsReport};

/// Side-by-side table of finished runs: model, candidate count, wall time,
/// process-parameter means, modal G and q, and (when scored) ARI and error.
pub fn run(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    if run_dirs.is_empty() {
        return Err(Error::Validation("give at least one run directory".into()));
    }
    let mut csv = String::from("model,n_models,time_s,alpha,d,G,Q,adj_rand,error_pct\n");
    for dir in run_dirs {
        let trace_dir = resolve_trace_dir(dir)?;
        let trace = ChainTrace::load(&trace_dir)?;
        let summary = load_or_summarise(&trace_dir)?;
        let (n_models, time_s) = match std::fs::read_to_string(dir.join("grid.json")) {
            Ok(text) => match serde_json::from_str::<GridReport>(&text) {
                Ok(g) => (g.n_models, g.total_wall_time_s),
                Err(_) => (1, trace.meta.wall_time_s),
            },
            Err(_) => (1, trace.meta.wall_time_s),
        };
        let metrics: Option<MetricsReport> = std::fs::read_to_string(trace_dir.join("metrics.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let q_list =
            summary.modal_q.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(" ");
        csv.push_str(&format!(
            "{},{},{:.1},{:.2},{:.2},{},{},{},{}\n",
            trace.meta.kind.name(),
            n_models,
            time_s,
            summary.alpha_mean,
            summary.discount_mean,
            summary.modal_g,
            q_list,
            metrics.as_ref().map_or(String::new(), |m| format!("{:.3}", m.adjusted_rand)),
            metrics.as_ref().map_or(String::new(), |m| format!("{:.2}", 100.0 * m.error_rate)),
        ));
    }
    match out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| Error::io(path.display().to_string(), e))?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
