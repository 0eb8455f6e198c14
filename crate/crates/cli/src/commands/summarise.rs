use std::path::Path;

use facmix::error::Result;
use facmix::mcmc::ChainTrace;
use facmix::posthoc::{summarize, SummaryOptions};

use crate::runs::{resolve_trace_dir, write_summary_files};

pub fn run(run_dir: &Path) -> Result<()> {
    let dir = resolve_trace_dir(run_dir)?;
    let trace = ChainTrace::load(&dir)?;
    let summary = summarize(&trace, &SummaryOptions::default())?;
    write_summary_files(&dir, &trace, &summary)?;
    println!(
        "{}: modal G = {}, modal q = {:?}, retained {} of {} samples",
        dir.display(),
        summary.modal_g,
        summary.modal_q,
        summary.retained_samples,
        trace.samples.len()
    );
    println!("wrote {}/summary.json and plots/*.csv", dir.display());
    Ok(())
}
