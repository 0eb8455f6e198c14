use std::path::Path;

use facmix::data::{simulate_mfa, write_csv, write_sim_truth};
use facmix::dist::RngStream;
use facmix::error::{Error, Result};

use crate::config::SimConfigFile;
use crate::runs::prepare_out_dir;

pub fn run(config_path: &Path, out: &Path, seed: Option<u64>, force: bool) -> Result<()> {
    let cfg = SimConfigFile::load(config_path)?;
    if cfg.replicates == 0 {
        return Err(Error::Validation("replicate count must be at least 1".into()));
    }
    prepare_out_dir(out, force)?;
    let root_seed = seed.unwrap_or(cfg.seed);
    let root = RngStream::new(root_seed);
    for rep in 0..cfg.replicates {
        let spec = cfg.spec(root.derive(rep as u64).seed());
        let (data, truth) = simulate_mfa(&spec)?;
        let csv_path = out.join(format!("rep_{:03}.csv", rep + 1));
        let truth_path = out.join(format!("rep_{:03}.truth.json", rep + 1));
        write_csv(&data, &csv_path)?;
        write_sim_truth(&truth, &truth_path)?;
        println!("wrote {} ({} x {})", csv_path.display(), data.n(), data.p());
    }
    Ok(())
}
