//! Prototype selection by greedy maximisation of a kernel mean-matching
//! objective with nonnegative weights.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExplainerError, ExplainerOutput, Payload, SampleRow, SampleSet, PROTODASH};
use crate::ingest::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtodashConfig {
    pub m: usize,
    /// RBF width in z-score units. `None` applies the median heuristic.
    pub kernel_width: Option<f64>,
    pub sweeps: usize,
    pub tolerance: f64,
    /// Rows sampled for the median heuristic.
    pub heuristic_sample: usize,
    pub seed: u64,
}

impl Default for ProtodashConfig {
    fn default() -> Self {
        ProtodashConfig { m: 5, kernel_width: None, sweeps: 200, tolerance: 1e-8, heuristic_sample: 256, seed: 7 }
    }
}

/// Standardizes rows with the given statistics; a zero spread is treated as 1.
pub fn zscore_rows(rows: &[Vec<f64>], means: &[f64], stds: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(means.iter().zip(stds))
                .map(|(x, (m, s))| (x - m) / if *s > 0.0 && s.is_finite() { *s } else { 1.0 })
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    (-sq_dist(a, b) / (2.0 * sigma * sigma)).exp()
}

/// Median pairwise Euclidean distance over a seeded sample of at most
/// `sample_size` rows. Falls back to 1 when every sampled pair coincides.
pub fn median_heuristic_width(rows: &[Vec<f64>], sample_size: usize, seed: u64) -> f64 {
    let picked: Vec<&Vec<f64>> = if rows.len() > sample_size {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, rows.len(), sample_size).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &rows[i]).collect()
    } else {
        rows.iter().collect()
    };
    let mut d: Vec<f64> = Vec::new();
    for i in 0..picked.len() {
        for j in i + 1..picked.len() {
            d.push(sq_dist(picked[i], picked[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Kernel quantities for one selection problem: candidate Gram matrix and the
/// mean similarity of each candidate to the target rows.
#[derive(Debug, Clone)]
pub struct ProtodashProblem {
    pub kernel: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub sweeps: usize,
    pub tolerance: f64,
}

impl ProtodashProblem {
    pub fn new(source_z: &[Vec<f64>], target_z: &[Vec<f64>], sigma: f64) -> Result<Self, ExplainerError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ExplainerError::NonPositiveWidth(sigma));
        }
        if source_z.is_empty() {
            return Err(ExplainerError::EmptySource);
        }
        if target_z.is_empty() {
            return Err(ExplainerError::EmptyInput);
        }
        let n = source_z.len();
        let mut kernel = vec![vec![0.0; n]; n];
        for i in 0..n {
            kernel[i][i] = 1.0;
            for j in i + 1..n {
                let k = rbf(&source_z[i], &source_z[j], sigma);
                kernel[i][j] = k;
                kernel[j][i] = k;
            }
        }
        let mu = source_z
            .iter()
            .map(|s| target_z.iter().map(|t| rbf(s, t, sigma)).sum::<f64>() / target_z.len() as f64)
            .collect();
        Ok(ProtodashProblem { kernel, mu, sweeps: 200, tolerance: 1e-8 })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `wᵀμ − ½ wᵀKw` restricted to `selected`.
    pub fn objective(&self, selected: &[usize], w: &[f64]) -> f64 {
        let lin: f64 = selected.iter().zip(w).map(|(&i, wi)| wi * self.mu[i]).sum();
        let mut quad = 0.0;
        for (a, &i) in selected.iter().enumerate() {
            for (b, &j) in selected.iter().enumerate() {
                quad += w[a] * w[b] * self.kernel[i][j];
            }
        }
        lin - 0.5 * quad
    }

    fn gradient(&self, selected: &[usize], w: &[f64], j: usize) -> f64 {
        self.mu[j] - selected.iter().zip(w).map(|(&i, wi)| self.kernel[j][i] * wi).sum::<f64>()
    }

    /// Nonnegative weights for `selected` by projected coordinate ascent from
    /// `start`, followed by an exact solve on the positive support that is kept
    /// only if it stays feasible and does not lower the objective.
    pub fn fit_weights(&self, selected: &[usize], start: &[f64]) -> Vec<f64> {
        let mut w = start.to_vec();
        w.resize(selected.len(), 0.0);
        for _ in 0..self.sweeps {
            let mut delta: f64 = 0.0;
            for a in 0..selected.len() {
                let i = selected[a];
                let others: f64 = selected
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(b, &j)| self.kernel[i][j] * w[b])
                    .sum();
                let next = ((self.mu[i] - others) / self.kernel[i][i]).max(0.0);
                delta = delta.max((next - w[a]).abs());
                w[a] = next;
            }
            if delta < self.tolerance {
                break;
            }
        }
        self.polish(selected, w)
    }

    fn polish(&self, selected: &[usize], w: Vec<f64>) -> Vec<f64> {
        let support: Vec<usize> = (0..selected.len()).filter(|&a| w[a] > 0.0).collect();
        if support.is_empty() {
            return w;
        }
        let k = DMatrix::from_fn(support.len(), support.len(), |r, c| {
            self.kernel[selected[support[r]]][selected[support[c]]]
        });
        let mu = DVector::from_iterator(support.len(), support.iter().map(|&a| self.mu[selected[a]]));
        let Some(chol) = k.cholesky() else { return w };
        let exact = chol.solve(&mu);
        if exact.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return w;
        }
        let mut candidate = vec![0.0; selected.len()];
        for (r, &a) in support.iter().enumerate() {
            candidate[a] = exact[r];
        }
        if self.objective(selected, &candidate) >= self.objective(selected, &w) {
            candidate
        } else {
            w
        }
    }

    /// Greedy selection of up to `m` candidates. Returns indices in selection
    /// order, their weights, and the objective after each step.
    pub fn greedy(&self, m: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut selected: Vec<usize> = Vec::new();
        let mut w: Vec<f64> = Vec::new();
        let mut trace = Vec::new();
        while selected.len() < m {
            let best = (0..self.len())
                .filter(|j| !selected.contains(j))
                .map(|j| (j, self.gradient(&selected, &w, j)))
                .fold(None::<(usize, f64)>, |acc, (j, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((j, g)),
                });
            match best {
                Some((j, g)) if g > 1e-12 => {
                    selected.push(j);
                    w = self.fit_weights(&selected, &w);
                    trace.push(self.objective(&selected, &w));
                }
                _ => break,
            }
        }
        (selected, w, trace)
    }
}

/// Selects `config.m` weighted prototypes from `source` that summarise
/// `target`. Features are z-scored with source statistics.
pub fn protodash(target: &Dataset, source: &Dataset, config: &ProtodashConfig) -> Result<ExplainerOutput, ExplainerError> {
    let started = Instant::now();
    if source.is_empty() {
        return Err(ExplainerError::EmptySource);
    }
    if config.m == 0 || config.m > source.len() {
        return Err(ExplainerError::InvalidCount(format!(
            "m must be between 1 and {}, got {}",
            source.len(),
            config.m
        )));
    }
    let means = source.feature_means();
    let stds = source.feature_stds();
    let source_z = zscore_rows(&source.rows, &means, &stds);
    let target_z = zscore_rows(&target.rows, &means, &stds);
    let sigma = match config.kernel_width {
        Some(s) => s,
        None => median_heuristic_width(&source_z, config.heuristic_sample, config.seed),
    };
    let mut problem = ProtodashProblem::new(&source_z, &target_z, sigma)?;
    problem.sweeps = config.sweeps;
    problem.tolerance = config.tolerance;
    let (selected, weights, trace) = problem.greedy(config.m);

    let rows = selected
        .iter()
        .zip(&weights)
        .map(|(&i, &w)| SampleRow {
            row_id: Some(source.row_ids[i]),
            values: source.rows[i].clone(),
            weight: w,
            prediction: None,
            zero_change: false,
        })
        .collect();
    let payload = Payload::Samples(SampleSet { features: source.schema.feature_names.clone(), rows });
    let cfg = serde_json::json!({
        "m": config.m,
        "kernel_width": sigma,
        "kernel_width_source": if config.kernel_width.is_some() { "configured" } else { "median_heuristic" },
        "standardization": "source_zscore",
        "sweeps": config.sweeps,
        "tolerance": config.tolerance,
        "target_rows": target.len(),
        "source_rows": source.len(),
    });
    let mut out = ExplainerOutput::new(PROTODASH, payload, None, config.seed, started, cfg);
    out.diagnostics.insert("kernel_width".into(), sigma);
    out.diagnostics.insert("objective".into(), trace.last().copied().unwrap_or(0.0));
    out.diagnostics.insert("selected".into(), selected.len() as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DatasetSchema;
    use proptest::prelude::*;

    fn ds(rows: Vec<Vec<f64>>) -> Dataset {
        let m = rows[0].len();
        let names: Vec<String> = (0..m).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let n = rows.len();
        Dataset::new(DatasetSchema::numeric(&refs), rows, vec![0; n]).unwrap()
    }

    #[test]
    fn single_atom() {
        let d = ds(vec![vec![2.0, 3.0]; 10]);
        let out = protodash(&d, &d, &ProtodashConfig { m: 1, ..Default::default() }).unwrap();
        let s = out.samples().unwrap();
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].values, vec![2.0, 3.0]);
        assert!((s.rows[0].weight - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = ds(vec![vec![0.0], vec![1.0]]);
        let bad_width = ProtodashConfig { m: 1, kernel_width: Some(0.0), ..Default::default() };
        assert!(matches!(protodash(&d, &d, &bad_width), Err(ExplainerError::NonPositiveWidth(_))));
        let too_many = ProtodashConfig { m: 3, ..Default::default() };
        assert!(matches!(protodash(&d, &d, &too_many), Err(ExplainerError::InvalidCount(_))));
    }

    #[test]
    fn median_heuristic_on_a_line() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        assert_eq!(median_heuristic_width(&rows, 256, 0), 1.0);
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![0.0]];
        assert_eq!(median_heuristic_width(&rows, 256, 0), 1.0);
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![4.0], vec![10.0]];
        assert_eq!(median_heuristic_width(&rows, 256, 0), 6.0);
    }

    #[test]
    fn weights_are_deterministic() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let d = ds(rows);
        let cfg = ProtodashConfig { m: 4, ..Default::default() };
        assert_eq!(protodash(&d, &d, &cfg).unwrap().payload, protodash(&d, &d, &cfg).unwrap().payload);
    }

    proptest! {
        #[test]
        fn objective_never_decreases(points in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..25), m in 1usize..6) {
            let rows: Vec<Vec<f64>> = points.iter().map(|&(a, b)| vec![a, b]).collect();
            let p = ProtodashProblem::new(&rows, &rows, 1.5).unwrap();
            let (sel, w, trace) = p.greedy(m.min(rows.len()));
            prop_assert!(w.iter().all(|v| *v >= 0.0));
            prop_assert_eq!(sel.len(), trace.len());
            for pair in trace.windows(2) {
                prop_assert!(pair[1] >= pair[0] - 1e-12);
            }
        }
    }
}
