//! Data ingestion, preprocessing and synthetic-data generation.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{sample_std_normal, sample_uniform, RngStream};
use crate::error::{Error, Result};

/// Column scaling applied after optional centering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    #[default]
    None,
    /// Divide by the sample standard deviation (N-1 denominator).
    Unit,
    /// Divide by the square root of the sample standard deviation.
    Pareto,
}

impl fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaleMode::None => write!(f, "none"),
            ScaleMode::Unit => write!(f, "unit"),
            ScaleMode::Pareto => write!(f, "pareto"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub center: bool,
    #[serde(default)]
    pub scale: ScaleMode,
}

/// An N x p data matrix with optional ground-truth labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    var_names: Vec<String>,
    true_labels: Option<Vec<usize>>,
    label_names: Vec<String>,
    preprocessing: PreprocessSpec,
}

impl Dataset {
    /// Build a dataset, enforcing the shape and finiteness invariants.
    pub fn new(
        x: DMatrix<f64>,
        var_names: Vec<String>,
        true_labels: Option<Vec<usize>>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if n < 2 {
            return Err(Error::Shape(format!("need at least 2 observations, got {n}")));
        }
        if p < 1 {
            return Err(Error::Shape("need at least 1 variable".into()));
        }
        if var_names.len() != p {
            return Err(Error::Shape(format!("{} variable names for {p} columns", var_names.len())));
        }
        for (idx, v) in x.iter().enumerate() {
            if !v.is_finite() {
                let row = idx % n;
                let col = idx / n;
                return Err(Error::Parse {
                    row: row + 1,
                    col: col + 1,
                    detail: format!("non-finite entry {v}"),
                });
            }
        }
        if let Some(labels) = &true_labels {
            if labels.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
            }
            let l_max = *labels.iter().max().unwrap_or(&0);
            if l_max == 0 || labels.iter().any(|&l| l == 0) {
                return Err(Error::Shape("labels must be 1-based".into()));
            }
            for lab in 1..=l_max {
                if !labels.contains(&lab) {
                    return Err(Error::Shape(format!("label {lab} never occurs")));
                }
            }
        }
        Ok(Dataset { x, var_names, true_labels, label_names, preprocessing: PreprocessSpec::default() })
    }

    pub fn from_matrix(x: DMatrix<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("v{j}")).collect();
        Dataset::new(x, names, None, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }
    /// Ground-truth labels, 1-based, if present.
    pub fn true_labels(&self) -> Option<&[usize]> {
        self.true_labels.as_deref()
    }
    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }
    pub fn preprocessing(&self) -> PreprocessSpec {
        self.preprocessing
    }

    /// Column sample means.
    pub fn column_means(&self) -> DVector<f64> {
        let n = self.n() as f64;
        DVector::from_fn(self.p(), |j, _| self.x.column(j).sum() / n)
    }

    /// Column sample standard deviations (N-1 denominator).
    pub fn column_sds(&self) -> DVector<f64> {
        let n = self.n() as f64;
        let means = self.column_means();
        DVector::from_fn(self.p(), |j, _| {
            let ss: f64 = self.x.column(j).iter().map(|v| (v - means[j]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
    }

    /// Sample covariance matrix (N-1 denominator).
    pub fn sample_cov(&self) -> DMatrix<f64> {
        let n = self.n();
        let means = self.column_means();
        let mut centered = self.x.clone();
        for j in 0..self.p() {
            centered.column_mut(j).add_scalar_mut(-means[j]);
        }
        centered.transpose() * centered / (n as f64 - 1.0)
    }
}

/// Apply centering/scaling per `spec`; the returned dataset records what was done.
pub fn preprocess(d: &Dataset, spec: PreprocessSpec) -> Result<Dataset> {
    let mut x = d.x.clone();
    if spec.center {
        let means = d.column_means();
        for j in 0..d.p() {
            x.column_mut(j).add_scalar_mut(-means[j]);
        }
    }
    match spec.scale {
        ScaleMode::None => {}
        ScaleMode::Unit | ScaleMode::Pareto => {
            let sds = d.column_sds();
            for j in 0..d.p() {
                if !(sds[j] > 0.0) {
                    return Err(Error::DegenerateColumn {
                        name: d.var_names[j].clone(),
                        detail: "zero sample standard deviation under unit/pareto scaling".into(),
                    });
                }
                let div = match spec.scale {
                    ScaleMode::Unit => sds[j],
                    ScaleMode::Pareto => sds[j].sqrt(),
                    ScaleMode::None => unreachable!(),
                };
                x.column_mut(j).scale_mut(1.0 / div);
            }
        }
    }
    Ok(Dataset {
        x,
        var_names: d.var_names.clone(),
        true_labels: d.true_labels.clone(),
        label_names: d.label_names.clone(),
        preprocessing: spec,
    })
}

/// Load a rectangular numeric CSV. An optional label column (by header name, or a
/// 1-based column index when there is no header) is removed from the matrix and
/// stored as ground-truth labels; distinct label values are numbered 1.. in order
/// of first appearance.
pub fn load_matrix(path: &Path, has_header: bool, label_column: Option<&str>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut names: Vec<String> = Vec::new();
    if has_header {
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse { row: 1, col: 0, detail: e.to_string() })?;
        names = headers.iter().map(|s| s.to_string()).collect();
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (ridx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: ridx + 1 + usize::from(has_header),
            col: 0,
            detail: e.to_string(),
        })?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    if rows.is_empty() {
        return Err(Error::Shape(format!("{} contains no data rows", path.display())));
    }
    let width = if has_header { names.len() } else { rows[0].len() };
    for (ridx, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Shape(format!(
                "ragged csv: row {} has {} fields, expected {width}",
                ridx + 1 + usize::from(has_header),
                row.len()
            )));
        }
    }
    if !has_header {
        names = (1..=width).map(|j| format!("v{j}")).collect();
    }

    let label_idx: Option<usize> = match label_column {
        None => None,
        Some(name) => {
            let by_name = names.iter().position(|n| n == name);
            let idx = if has_header {
                by_name
            } else {
                // 1-based index accepted when there is no header row.
                by_name.or_else(|| name.parse::<usize>().ok().and_then(|i| i.checked_sub(1)))
            };
            match idx {
                Some(i) if i < width => Some(i),
                _ => {
                    return Err(Error::Validation(format!(
                        "label column `{name}` not found among {names:?}"
                    )))
                }
            }
        }
    };

    let n = rows.len();
    let p = width - usize::from(label_idx.is_some());
    if p == 0 {
        return Err(Error::Shape("no numeric columns left after removing labels".into()));
    }

    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut labels: Vec<usize> = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    for (ridx, row) in rows.iter().enumerate() {
        let mut out_col = 0usize;
        for (cidx, cell) in row.iter().enumerate() {
            if Some(cidx) == label_idx {
                let pos = match label_names.iter().position(|l| l == cell) {
                    Some(p) => p,
                    None => {
                        label_names.push(cell.clone());
                        label_names.len() - 1
                    }
                };
                labels.push(pos + 1);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: ridx + 1 + usize::from(has_header),
                col: cidx + 1,
                detail: format!("expected a number, found `{cell}`"),
            })?;
            x[(ridx, out_col)] = v;
            out_col += 1;
        }
    }

    let var_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, n)| n.clone())
        .collect();
    let true_labels = label_idx.map(|_| labels);
    Dataset::new(x, var_names, true_labels, label_names)
}

/// Specification for synthetic data drawn from a finite factor-analytic mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    pub n_clusters: usize,
    /// Number of factors per cluster (length `n_clusters`).
    pub factors: Vec<usize>,
    /// Mixing proportions; must sum to 1.
    pub weights: Vec<f64>,
    /// Scale of the spread of cluster means: means are drawn MVN(0, scale^2 I).
    pub separation: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 || self.n_clusters < 1 {
            return Err(Error::Validation("simulation needs n >= 2, p >= 1, clusters >= 1".into()));
        }
        if self.factors.len() != self.n_clusters || self.weights.len() != self.n_clusters {
            return Err(Error::Validation("factors and weights must have one entry per cluster".into()));
        }
        if self.factors.iter().any(|&q| q > self.p) {
            return Err(Error::Validation("cluster factor count exceeds number of variables".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Validation(format!("weights must form a simplex, sum = {total}")));
        }
        if !(self.separation > 0.0) {
            return Err(Error::Validation("separation scale must be positive".into()));
        }
        Ok(())
    }

    /// Equal weights, common factor count.
    pub fn balanced(n: usize, p: usize, g: usize, q: usize, separation: f64, seed: u64) -> Self {
        SimSpec {
            n,
            p,
            n_clusters: g,
            factors: vec![q; g],
            weights: vec![1.0 / g as f64; g],
            separation,
            seed,
        }
    }
}

/// The generating parameters behind a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    /// 1-based generating labels.
    pub z: Vec<usize>,
    pub mu: Vec<Vec<f64>>,
    /// Row-major p x q_g loadings per cluster.
    pub lambda: Vec<Vec<Vec<f64>>>,
    pub psi: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub seed: u64,
}

/// Draw a dataset from the mixture-of-factor-analysers generative model:
/// z_i ~ Mult(pi), x_i ~ MVN(mu_g, Lambda_g Lambda_g' + Psi_g).
///
/// Cluster means are MVN(0, separation^2 I), loadings entries standard normal,
/// uniquenesses Uniform(0.2, 1). Deterministic given the seed.
pub fn simulate_mfa(spec: &SimSpec) -> Result<(Dataset, SimTruth)> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed);
    let g = spec.n_clusters;
    let p = spec.p;

    let mut mu = Vec::with_capacity(g);
    let mut lambda = Vec::with_capacity(g);
    let mut psi = Vec::with_capacity(g);
    for k in 0..g {
        mu.push(DVector::from_fn(p, |_, _| spec.separation * sample_std_normal(&mut rng)));
        lambda.push(DMatrix::from_fn(p, spec.factors[k], |_, _| sample_std_normal(&mut rng)));
        psi.push(DVector::from_fn(p, |_, _| sample_uniform(&mut rng, 0.2, 1.0).unwrap()));
    }

    // Multinomial labels via inverse cdf on the simplex.
    let mut z = Vec::with_capacity(spec.n);
    let mut x = DMatrix::<f64>::zeros(spec.n, p);
    for i in 0..spec.n {
        let u: f64 = sample_uniform(&mut rng, 0.0, 1.0)?;
        let mut acc = 0.0;
        let mut gi = g - 1;
        for (k, &w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                gi = k;
                break;
            }
        }
        z.push(gi + 1);
        let q = spec.factors[gi];
        let eta = DVector::from_fn(q, |_, _| sample_std_normal(&mut rng));
        let mut xi = &mu[gi] + &lambda[gi] * eta;
        for j in 0..p {
            xi[j] += psi[gi][j].sqrt() * sample_std_normal(&mut rng);
        }
        x.set_row(i, &xi.transpose());
    }

    let names = (1..=p).map(|j| format!("v{j}")).collect();
    let label_names = (1..=g).map(|k| format!("cluster{k}")).collect();
    let data = Dataset::new(x, names, Some(z.clone()), label_names)?;
    let truth = SimTruth {
        z,
        mu: mu.iter().map(|v| v.iter().copied().collect()).collect(),
        lambda: lambda
            .iter()
            .map(|m| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
            .collect(),
        psi: psi.iter().map(|v| v.iter().copied().collect()).collect(),
        pi: spec.weights.clone(),
        seed: spec.seed,
    };
    Ok((data, truth))
}

/// Write a dataset as CSV (with header; labels in a trailing `label` column when present).
pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let mut header: Vec<String> = d.var_names.to_vec();
    if d.true_labels.is_some() {
        header.push("label".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..d.n() {
        let mut fields: Vec<String> = (0..d.p()).map(|j| format!("{}", d.x[(i, j)])).collect();
        if let Some(labels) = &d.true_labels {
            fields.push(labels[i].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write the generating parameters of a simulation as a JSON sidecar
/// (keys: "z", "mu", "lambda", "psi", "pi", "seed").
pub fn write_sim_truth(truth: &SimTruth, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(truth)
        .map_err(|e| Error::Validation(format!("serialising truth: {e}")))?;
    let mut f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(json.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tmp_csv(contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("facmix_test_{}.csv", rand::random::<u64>()));
        let mut f = File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn load_small_matrix() {
        let path = tmp_csv("1,2\n3,4\n5,6\n");
        let d = load_matrix(&path, false, None).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 2);
        assert_eq!(d.x()[(2, 1)], 6.0);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn load_with_label_column() {
        let path = tmp_csv("a,b,area\n1,2,south\n3,4,north\n5,6,south\n");
        let d = load_matrix(&path, true, Some("area")).unwrap();
        assert_eq!(d.p(), 2);
        assert_eq!(d.true_labels().unwrap(), &[1, 2, 1]);
        assert_eq!(d.label_names(), &["south".to_string(), "north".to_string()]);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn parse_error_names_row() {
        let path = tmp_csv("1,2\nabc,4\n5,6\n");
        match load_matrix(&path, false, None) {
            Err(Error::Parse { row, col, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(col, 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn ragged_rows_shape_error() {
        let path = tmp_csv("1,2\n3\n");
        assert!(matches!(load_matrix(&path, false, None), Err(Error::Shape(_))));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn headerless_label_column_by_index() {
        let path = tmp_csv("1,2,7\n3,4,7\n5,6,9\n");
        let d = load_matrix(&path, false, Some("3")).unwrap();
        assert_eq!(d.p(), 2);
        assert_eq!(d.true_labels().unwrap(), &[1, 1, 2]);
        assert!(load_matrix(&path, false, Some("9")).is_err());
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn center_unit_hand_case() {
        // column (1,2,3): sample sd is 1, so center+unit gives (-1, 0, 1).
        let d = Dataset::from_matrix(DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0])).unwrap();
        let out = preprocess(&d, PreprocessSpec { center: true, scale: ScaleMode::Unit }).unwrap();
        assert_relative_eq!(out.x()[(0, 0)], -1.0, epsilon = 1e-12);
        assert_relative_eq!(out.x()[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(out.x()[(2, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn center_pareto_hand_case() {
        // column (0,0,4): centered is (-4/3,-4/3,8/3), sd = sqrt(16/3),
        // pareto divides by sd^(1/2).
        let d = Dataset::from_matrix(DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 4.0])).unwrap();
        let out = preprocess(&d, PreprocessSpec { center: true, scale: ScaleMode::Pareto }).unwrap();
        let sd = (16.0f64 / 3.0).sqrt();
        let div = sd.sqrt();
        assert_relative_eq!(out.x()[(0, 0)], (-4.0 / 3.0) / div, epsilon = 1e-12);
        assert_relative_eq!(out.x()[(2, 0)], (8.0 / 3.0) / div, epsilon = 1e-12);
    }

    #[test]
    fn identity_preprocess() {
        let d = Dataset::from_matrix(DMatrix::from_column_slice(3, 1, &[1.0, 5.0, -2.0])).unwrap();
        let out = preprocess(&d, PreprocessSpec { center: false, scale: ScaleMode::None }).unwrap();
        assert_eq!(out.x(), d.x());
    }

    #[test]
    fn zero_variance_column_rejected() {
        let d = Dataset::from_matrix(DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0])).unwrap();
        match preprocess(&d, PreprocessSpec { center: true, scale: ScaleMode::Unit }) {
            Err(Error::DegenerateColumn { name, .. }) => assert_eq!(name, "v1"),
            other => panic!("expected degenerate column error, got {other:?}"),
        }
    }

    #[test]
    fn preprocessed_moments() {
        let spec = SimSpec::balanced(200, 4, 2, 1, 1.0, 99);
        let (d, _) = simulate_mfa(&spec).unwrap();
        let out = preprocess(&d, PreprocessSpec { center: true, scale: ScaleMode::Unit }).unwrap();
        let means = out.column_means();
        let sds = out.column_sds();
        for j in 0..4 {
            assert!(means[j].abs() < 1e-10);
            assert!((sds[j] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = SimSpec::balanced(50, 5, 3, 2, 1.0, 1234);
        let (d1, t1) = simulate_mfa(&spec).unwrap();
        let (d2, t2) = simulate_mfa(&spec).unwrap();
        assert_eq!(d1.x(), d2.x());
        assert_eq!(t1.z, t2.z);
    }

    #[test]
    fn simulation_label_proportions() {
        // Empirical proportions within 3 binomial sigma of pi at N = 1e5.
        let spec = SimSpec {
            n: 100_000,
            p: 1,
            n_clusters: 3,
            factors: vec![0, 0, 0],
            weights: vec![0.5, 0.3, 0.2],
            separation: 1.0,
            seed: 7,
        };
        let (_, truth) = simulate_mfa(&spec).unwrap();
        for (k, &w) in spec.weights.iter().enumerate() {
            let count = truth.z.iter().filter(|&&z| z == k + 1).count() as f64;
            let freq = count / spec.n as f64;
            let sigma = (w * (1.0 - w) / spec.n as f64).sqrt();
            assert!((freq - w).abs() < 3.0 * sigma, "cluster {k}: {freq} vs {w}");
        }
    }

    #[test]
    fn zero_factor_covariance_is_diagonal() {
        let spec = SimSpec::balanced(10_000, 3, 1, 0, 1.0, 5);
        let (d, truth) = simulate_mfa(&spec).unwrap();
        // Generating covariance is exactly diagonal; sample off-diagonals shrink.
        let cov = d.sample_cov();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(cov[(i, j)].abs() < 0.05, "cov[{i}{j}] = {}", cov[(i, j)]);
                }
            }
        }
        assert!(truth.lambda[0].iter().all(|row| row.is_empty()));
    }

    #[test]
    fn invalid_sim_specs_rejected() {
        let mut spec = SimSpec::balanced(10, 2, 2, 3, 1.0, 1);
        assert!(spec.validate().is_err()); // q > p
        spec.factors = vec![1, 1];
        spec.weights = vec![0.6, 0.6];
        assert!(spec.validate().is_err()); // not a simplex
    }

    #[test]
    fn csv_roundtrip_with_labels() {
        let spec = SimSpec::balanced(20, 3, 2, 1, 1.0, 11);
        let (d, _) = simulate_mfa(&spec).unwrap();
        let path = std::env::temp_dir().join(format!("facmix_rt_{}.csv", rand::random::<u64>()));
        write_csv(&d, &path).unwrap();
        let back = load_matrix(&path, true, Some("label")).unwrap();
        assert_eq!(back.n(), d.n());
        assert_eq!(back.p(), d.p());
        // Label values are renumbered by first appearance; partitions must match.
        let a = d.true_labels().unwrap();
        let b = back.true_labels().unwrap();
        for i in 0..d.n() {
            for k in 0..d.n() {
                assert_eq!(a[i] == a[k], b[i] == b[k]);
            }
        }
        std::fs::remove_file(path).ok();
    }
}
