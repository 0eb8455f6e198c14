use std::path::Path;

use facmix::data::load_matrix;
use facmix::error::{Error, Result};
use facmix::metrics::{adjusted_rand, error_rate, Partition};

use crate::runs::{load_or_summarise, resolve_trace_dir, write_metrics, MetricsReport};

/// Read labels: a CSV column when `label_column` is given, otherwise one label
/// per line (strings allowed; distinct values are numbered by first
/// appearance).
fn read_labels(path: &Path, label_column: Option<&str>, has_header: bool) -> Result<Vec<usize>> {
    if let Some(col) = label_column {
        let data = load_matrix(path, true, Some(col))?;
        return Ok(data.true_labels().expect("label column requested").to_vec());
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut seen: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 && has_header {
            continue;
        }
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        let pos = match seen.iter().position(|s| s == token) {
            Some(p) => p,
            None => {
                seen.push(token.to_string());
                seen.len() - 1
            }
        };
        labels.push(pos + 1);
    }
    if labels.is_empty() {
        return Err(Error::Validation(format!("no labels found in {}", path.display())));
    }
    Ok(labels)
}

pub fn run(run_dir: &Path, truth: &Path, label_column: Option<&str>, has_header: bool) -> Result<()> {
    let dir = resolve_trace_dir(run_dir)?;
    let summary = load_or_summarise(&dir)?;
    let truth_labels = read_labels(truth, label_column, has_header)?;
    if truth_labels.len() != summary.map_labels.len() {
        return Err(Error::Shape(format!(
            "{} truth labels for {} observations",
            truth_labels.len(),
            summary.map_labels.len()
        )));
    }
    let pred =
        Partition::new(&summary.map_labels.iter().map(|&l| l as usize).collect::<Vec<_>>())?;
    let truth_p = Partition::new(&truth_labels)?;
    let ari = adjusted_rand(&pred, &truth_p)?;
    let err = error_rate(&pred, &truth_p)?;
    let report = MetricsReport { adjusted_rand: ari, error_rate: err.error, n: truth_labels.len() };
    write_metrics(&dir, &report, &err.confusion)?;
    println!(
        "{}: adjusted Rand = {:.4}, error rate = {:.2}%",
        dir.display(),
        ari,
        100.0 * err.error
    );
    println!("wrote {}/metrics.json and confusion.csv", dir.display());
    Ok(())
}
