//! Thinned post-burn-in samples and their on-disk run-directory format:
//! `trace.meta.json`, `trace.scalars.csv`, `trace.z.bin` and `trace.params.bin`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{McmcControl, ModelKind};
use super::sampler::{Counters, Sampler};

/// Cluster parameters kept when `store_loadings` is on.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredParams {
    pub means: Vec<DVector<f64>>,
    pub uniquenesses: Vec<DVector<f64>>,
    pub loadings: Vec<DMatrix<f64>>,
    /// N x qmax factor scores.
    pub scores: DMatrix<f64>,
}

/// One thinned post-burn-in state.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub iter: u64,
    /// 1-based cluster labels.
    pub labels: Vec<u32>,
    /// Truncation level per instantiated cluster.
    pub q: Vec<u32>,
    /// Number of non-empty clusters.
    pub g0: u32,
    pub loglik: f64,
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub discount: f64,
    pub params: Option<StoredParams>,
}

impl StoredSample {
    /// Indices (0-based) of the non-empty clusters.
    pub fn nonempty_clusters(&self) -> Vec<usize> {
        let g_inst = self.q.len();
        let mut counts = vec![0usize; g_inst];
        for &l in &self.labels {
            counts[(l - 1) as usize] += 1;
        }
        (0..g_inst).filter(|&g| counts[g] > 0).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMeta {
    pub kind: ModelKind,
    pub n: usize,
    pub p: usize,
    /// Instantiated clusters at initialisation (the fixed G or the ceiling).
    pub g_init: usize,
    /// Fixed factor count for the non-adaptive kinds.
    pub q_fixed: Option<usize>,
    pub control: McmcControl,
    pub isotropic: bool,
    pub n_stored: usize,
    pub counters: Counters,
    /// Wall time of the fit in seconds (not reproducible; everything else is).
    pub wall_time_s: f64,
    pub params_layout: String,
}

/// A recorded chain.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub meta: TraceMeta,
    pub samples: Vec<StoredSample>,
}

const PARAMS_LAYOUT: &str = "per sample, little-endian f64: g_inst; weights[g_inst]; then when \
store_loadings: qmax; per cluster (mean[p]; psi[p]; q_g; loadings[p*q_g] column-major); \
scores[n*qmax] row-major";

impl ChainTrace {
    pub fn new(resolved: &super::config::Resolved) -> Self {
        ChainTrace {
            meta: TraceMeta {
                kind: resolved.kind,
                n: resolved.n,
                p: resolved.p,
                g_init: resolved.g_init,
                q_fixed: resolved.q_fixed,
                control: resolved.control.clone(),
                isotropic: resolved.uniq.is_isotropic(),
                n_stored: 0,
                counters: Counters::default(),
                wall_time_s: 0.0,
                params_layout: PARAMS_LAYOUT.to_string(),
            },
            samples: Vec::new(),
        }
    }

    pub fn loglik_samples(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.loglik).collect()
    }

    /// Proportion of stored discount samples exactly at the zero atom.
    pub fn kappa_hat(&self) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        let zeros = self.samples.iter().filter(|s| s.discount == 0.0).count();
        Some(zeros as f64 / self.samples.len() as f64)
    }

    /// Record the sampler's current state as a stored sample.
    pub fn record(&mut self, sampler: &Sampler) -> Result<()> {
        let state = &sampler.state;
        let loglik = sampler.observed_loglik()?;
        let params = if self.meta.control.store_loadings {
            Some(StoredParams {
                means: state.clusters.iter().map(|c| c.mean.clone()).collect(),
                uniquenesses: state.clusters.iter().map(|c| c.uniquenesses.clone()).collect(),
                loadings: state.clusters.iter().map(|c| c.loadings.clone()).collect(),
                scores: state.scores.clone(),
            })
        } else {
            None
        };
        self.samples.push(StoredSample {
            iter: sampler.iteration() as u64,
            labels: state.labels.iter().map(|&z| z as u32 + 1).collect(),
            q: state.clusters.iter().map(|c| c.q() as u32).collect(),
            g0: state.count_nonempty() as u32,
            loglik,
            weights: state.weights.clone(),
            alpha: state.alpha,
            discount: state.discount,
            params,
        });
        self.meta.n_stored = self.samples.len();
        Ok(())
    }

    // ----- persistence ------------------------------------------------------

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let meta_path = dir.join("trace.meta.json");
        let json = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| Error::Trace(format!("meta serialisation: {e}")))?;
        std::fs::write(&meta_path, json).map_err(|e| Error::io(meta_path.display().to_string(), e))?;

        // Scalars: iter, G0, loglik, alpha, d, q_1..q_Gmax (0-padded).
        let g_max = self.samples.iter().map(|s| s.q.len()).max().unwrap_or(0);
        let scalars_path = dir.join("trace.scalars.csv");
        let mut out = String::new();
        out.push_str("iter,G0,loglik,alpha,d");
        for g in 1..=g_max {
            out.push_str(&format!(",q_{g}"));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{},{}", s.iter, s.g0, s.loglik, s.alpha, s.discount));
            for g in 0..g_max {
                let q = s.q.get(g).copied().unwrap_or(0);
                out.push_str(&format!(",{q}"));
            }
            out.push('\n');
        }
        std::fs::write(&scalars_path, out)
            .map_err(|e| Error::io(scalars_path.display().to_string(), e))?;

        // Labels: row-major little-endian i32 per stored sample.
        let z_path = dir.join("trace.z.bin");
        let mut zf = BufWriter::new(
            File::create(&z_path).map_err(|e| Error::io(z_path.display().to_string(), e))?,
        );
        for s in &self.samples {
            for &l in &s.labels {
                zf.write_all(&(l as i32).to_le_bytes())
                    .map_err(|e| Error::io(z_path.display().to_string(), e))?;
            }
        }
        zf.flush().map_err(|e| Error::io(z_path.display().to_string(), e))?;

        // Parameters: self-describing f64 stream (layout in the meta file).
        let p_path = dir.join("trace.params.bin");
        let mut pf = BufWriter::new(
            File::create(&p_path).map_err(|e| Error::io(p_path.display().to_string(), e))?,
        );
        let mut w = |v: f64| -> std::io::Result<()> { pf.write_all(&v.to_le_bytes()) };
        for s in &self.samples {
            let g_inst = s.q.len();
            w(g_inst as f64).map_err(|e| Error::io(p_path.display().to_string(), e))?;
            for &wt in &s.weights {
                w(wt).map_err(|e| Error::io(p_path.display().to_string(), e))?;
            }
            if let Some(params) = &s.params {
                let qmax = params.scores.ncols();
                w(qmax as f64).map_err(|e| Error::io(p_path.display().to_string(), e))?;
                for g in 0..g_inst {
                    for v in params.means[g].iter() {
                        w(*v).map_err(|e| Error::io(p_path.display().to_string(), e))?;
                    }
                    for v in params.uniquenesses[g].iter() {
                        w(*v).map_err(|e| Error::io(p_path.display().to_string(), e))?;
                    }
                    w(s.q[g] as f64).map_err(|e| Error::io(p_path.display().to_string(), e))?;
                    for v in params.loadings[g].iter() {
                        // nalgebra iterates column-major.
                        w(*v).map_err(|e| Error::io(p_path.display().to_string(), e))?;
                    }
                }
                for i in 0..params.scores.nrows() {
                    for k in 0..qmax {
                        w(params.scores[(i, k)])
                            .map_err(|e| Error::io(p_path.display().to_string(), e))?;
                    }
                }
            }
        }
        pf.flush().map_err(|e| Error::io(p_path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("trace.meta.json");
        let meta_str = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
        let meta: TraceMeta = serde_json::from_str(&meta_str)
            .map_err(|e| Error::Trace(format!("meta parse: {e}")))?;

        // Scalars.
        let scalars_path = dir.join("trace.scalars.csv");
        let text = std::fs::read_to_string(&scalars_path)
            .map_err(|e| Error::io(scalars_path.display().to_string(), e))?;
        let mut lines = text.lines();
        let _header = lines.next().ok_or_else(|| Error::Trace("empty scalars file".into()))?;
        struct ScalarRow {
            iter: u64,
            g0: u32,
            loglik: f64,
            alpha: f64,
            discount: f64,
            q_pad: Vec<u32>,
        }
        let mut rows = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 5 {
                return Err(Error::Trace(format!("short scalars row `{line}`")));
            }
            let parse_f = |s: &str| s.parse::<f64>().map_err(|e| Error::Trace(format!("scalars: {e}")));
            rows.push(ScalarRow {
                iter: fields[0].parse().map_err(|e| Error::Trace(format!("scalars: {e}")))?,
                g0: fields[1].parse().map_err(|e| Error::Trace(format!("scalars: {e}")))?,
                loglik: parse_f(fields[2])?,
                alpha: parse_f(fields[3])?,
                discount: parse_f(fields[4])?,
                q_pad: fields[5..]
                    .iter()
                    .map(|s| s.parse::<u32>().map_err(|e| Error::Trace(format!("scalars: {e}"))))
                    .collect::<Result<Vec<u32>>>()?,
            });
        }

        // Labels.
        let z_path = dir.join("trace.z.bin");
        let mut zf = BufReader::new(
            File::open(&z_path).map_err(|e| Error::io(z_path.display().to_string(), e))?,
        );
        let mut zbytes = Vec::new();
        zf.read_to_end(&mut zbytes).map_err(|e| Error::io(z_path.display().to_string(), e))?;
        let expect = rows.len() * meta.n * 4;
        if zbytes.len() != expect {
            return Err(Error::Trace(format!(
                "label file holds {} bytes, expected {expect}",
                zbytes.len()
            )));
        }

        // Parameters.
        let p_path = dir.join("trace.params.bin");
        let mut pf = BufReader::new(
            File::open(&p_path).map_err(|e| Error::io(p_path.display().to_string(), e))?,
        );
        let mut pbytes = Vec::new();
        pf.read_to_end(&mut pbytes).map_err(|e| Error::io(p_path.display().to_string(), e))?;
        let mut cursor = 0usize;
        let mut next_f64 = |what: &str| -> Result<f64> {
            if cursor + 8 > pbytes.len() {
                return Err(Error::Trace(format!("params file truncated reading {what}")));
            }
            let v = f64::from_le_bytes(pbytes[cursor..cursor + 8].try_into().unwrap());
            cursor += 8;
            Ok(v)
        };

        let mut samples = Vec::with_capacity(rows.len());
        for (s_idx, row) in rows.iter().enumerate() {
            let labels: Vec<u32> = (0..meta.n)
                .map(|i| {
                    let off = (s_idx * meta.n + i) * 4;
                    i32::from_le_bytes(zbytes[off..off + 4].try_into().unwrap()) as u32
                })
                .collect();
            let g_inst = next_f64("g_inst")? as usize;
            let mut weights = Vec::with_capacity(g_inst);
            for _ in 0..g_inst {
                weights.push(next_f64("weight")?);
            }
            let mut q = vec![0u32; g_inst];
            let params = if meta.control.store_loadings {
                let qmax = next_f64("qmax")? as usize;
                let mut means = Vec::with_capacity(g_inst);
                let mut uniq = Vec::with_capacity(g_inst);
                let mut loadings = Vec::with_capacity(g_inst);
                for g in 0..g_inst {
                    let mut mean = DVector::zeros(meta.p);
                    for j in 0..meta.p {
                        mean[j] = next_f64("mean")?;
                    }
                    let mut psi = DVector::zeros(meta.p);
                    for j in 0..meta.p {
                        psi[j] = next_f64("psi")?;
                    }
                    let q_g = next_f64("q_g")? as usize;
                    q[g] = q_g as u32;
                    let mut lam = DMatrix::zeros(meta.p, q_g);
                    for k in 0..q_g {
                        for j in 0..meta.p {
                            lam[(j, k)] = next_f64("loading")?;
                        }
                    }
                    means.push(mean);
                    uniq.push(psi);
                    loadings.push(lam);
                }
                let mut scores = DMatrix::zeros(meta.n, qmax);
                for i in 0..meta.n {
                    for k in 0..qmax {
                        scores[(i, k)] = next_f64("score")?;
                    }
                }
                Some(StoredParams { means, uniquenesses: uniq, loadings, scores })
            } else {
                for g in 0..g_inst.min(row.q_pad.len()) {
                    q[g] = row.q_pad[g];
                }
                None
            };
            samples.push(StoredSample {
                iter: row.iter,
                labels,
                q,
                g0: row.g0,
                loglik: row.loglik,
                weights,
                alpha: row.alpha,
                discount: row.discount,
                params,
            });
        }
        Ok(ChainTrace { meta, samples })
    }
}
