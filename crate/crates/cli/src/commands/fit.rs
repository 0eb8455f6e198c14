use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use facmix::data::{load_matrix, preprocess};
use facmix::error::{Error, Result};
use facmix::mcmc::fit as fit_model;

use crate::config::{GridMember, RunConfigFile};
use crate::runs::{criterion_name, criterion_value, prepare_out_dir, ComparisonRow, GridReport};

#[derive(Serialize)]
struct ResolvedEcho<'a> {
    config: &'a RunConfigFile,
    root_seed: u64,
    members: &'a [GridMember],
}

pub fn run(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
    force: bool,
) -> Result<()> {
    let started = Instant::now();
    let cfg = RunConfigFile::load(config_path)?;
    let members = cfg.expand(seed)?;
    let smallest_q = RunConfigFile::smallest_q(&members);
    let data_path = cfg.data_path(config_path);
    let raw = load_matrix(&data_path, cfg.has_header, cfg.label_column.as_deref())?;
    let data = preprocess(&raw, cfg.preprocess)?;
    prepare_out_dir(out, force)?;

    // Echo the full resolved configuration for auditability.
    let echo = ResolvedEcho {
        config: &cfg,
        root_seed: seed.unwrap_or(cfg.mcmc.seed),
        members: &members,
    };
    let echo_path = out.join("config.resolved.json");
    std::fs::write(
        &echo_path,
        serde_json::to_string_pretty(&echo)
            .map_err(|e| Error::Validation(format!("config echo: {e}")))?,
    )
    .map_err(|e| Error::io(echo_path.display().to_string(), e))?;

    let single = members.len() == 1;
    let run_member = |member: &GridMember| -> Result<(String, ComparisonRow, f64)> {
        let mut model_cfg = cfg.model_config(member, smallest_q)?;
        RunConfigFile::patch_mgp_for_p(&mut model_cfg, data.p());
        let trace = fit_model(&data, &model_cfg)?;
        let dir = if single { out.to_path_buf() } else { out.join("models").join(&member.name) };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        trace.save(&dir)?;
        let value = criterion_value(&trace)?;
        let row = ComparisonRow {
            model: member.name.clone(),
            clusters: member.clusters,
            factors: member.factors,
            criterion: criterion_name(member.kind).to_string(),
            value,
        };
        Ok((member.name.clone(), row, trace.meta.wall_time_s))
    };

    let results: Vec<Result<(String, ComparisonRow, f64)>> = match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
            pool.install(|| members.par_iter().map(run_member).collect())
        }
        None => members.par_iter().map(run_member).collect(),
    };
    let mut rows = Vec::new();
    for r in results {
        let (_, row, _) = r?;
        rows.push(row);
    }

    // comparison.csv: model, G, q, criterion, value.
    let mut csv = String::from("model,G,q,criterion,value\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.model,
            row.clusters.map_or(String::new(), |g| g.to_string()),
            row.factors.map_or(String::new(), |q| q.to_string()),
            row.criterion,
            row.value
        ));
    }
    let csv_path = out.join("comparison.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    let best = rows
        .iter()
        .max_by(|a, b| a.value.partial_cmp(&b.value).unwrap_or(std::cmp::Ordering::Equal))
        .expect("at least one member");
    let best_dir = if single { ".".to_string() } else { format!("models/{}", best.model) };
    let report = GridReport {
        n_models: rows.len(),
        total_wall_time_s: started.elapsed().as_secs_f64(),
        criterion: best.criterion.clone(),
        best: best_dir,
        rows: rows.clone(),
    };
    let grid_path = out.join("grid.json");
    std::fs::write(
        &grid_path,
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Validation(format!("grid report: {e}")))?,
    )
    .map_err(|e| Error::io(grid_path.display().to_string(), e))?;

    println!(
        "fitted {} model(s) in {:.1} s; best by {}: {} ({:.2})",
        rows.len(),
        report.total_wall_time_s,
        best.criterion,
        best.model,
        best.value
    );
    Ok(())
}
