//! Genetic search for diverse counterfactual rows over mutable features.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_dim, ExplainerError, ExplainerOutput, Payload, SampleRow, SampleSet, GENETIC_CF};
use crate::ingest::{Dataset, FeatureKind};
use crate::models::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualConfig {
    pub k: usize,
    pub population: usize,
    pub generations: usize,
    pub lambda_prox: f64,
    pub lambda_div: f64,
    /// Standard deviation of mutation steps, in z-score units.
    pub mutation_scale: f64,
    /// Valid rows, best loss first, that are refined and offered to the
    /// diverse selection.
    pub refine_limit: usize,
    /// Class the counterfactuals should receive. Defaults to the flip of the
    /// instance's predicted class.
    pub desired_class: Option<u8>,
    pub seed: u64,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        CounterfactualConfig {
            k: 3,
            population: 60,
            generations: 60,
            lambda_prox: 0.5,
            lambda_div: 0.5,
            mutation_scale: 0.5,
            refine_limit: 40,
            desired_class: None,
            seed: 7,
        }
    }
}

struct Space<'a, P: ?Sized> {
    model: &'a P,
    instance: &'a [f64],
    mutable: Vec<usize>,
    scale: Vec<f64>,
    ranges: Vec<(f64, f64)>,
    integer: Vec<bool>,
    desired: u8,
    lambda_prox: f64,
}

impl<P: Predictor + ?Sized> Space<'_, P> {
    fn is_valid(&self, x: &[f64]) -> bool {
        self.model.predict_class(x) == self.desired
    }

    fn hinge(&self, p: f64) -> f64 {
        if self.desired == 1 {
            (0.5 - p).max(0.0)
        } else {
            (p - 0.5).max(0.0)
        }
    }

    /// L1 distance to the instance in z-score units.
    fn distance(&self, x: &[f64]) -> f64 {
        self.mutable.iter().map(|&j| (x[j] - self.instance[j]).abs() / self.scale[j]).sum()
    }

    fn pair_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.mutable.iter().map(|&j| (a[j] - b[j]).abs() / self.scale[j]).sum()
    }

    /// Loss to minimise: the hinge plus a unit penalty while invalid, plus
    /// the proximity term.
    fn loss(&self, x: &[f64]) -> f64 {
        let p = self.model.predict(x);
        let invalid = if self.model.predict_class(x) == self.desired { 0.0 } else { 1.0 };
        2.0 * self.hinge(p) + invalid + self.lambda_prox * self.distance(x) / self.mutable.len() as f64
    }

    fn repair(&self, x: &mut [f64]) {
        for &j in &self.mutable {
            let (lo, hi) = self.ranges[j];
            let mut v = x[j].clamp(lo, hi);
            if self.integer[j] {
                v = v.round().clamp(lo.ceil(), hi.floor());
            }
            x[j] = v;
        }
    }

    fn mutate(&self, x: &mut [f64], rng: &mut ChaCha8Rng, sd: f64) {
        let rate = 1.0 / self.mutable.len() as f64;
        let forced = self.mutable[rng.random_range(0..self.mutable.len())];
        let normal = Normal::new(0.0, sd).expect("positive mutation scale");
        for &j in &self.mutable {
            if j == forced || rng.random::<f64>() < rate {
                x[j] += normal.sample(rng) * self.scale[j];
            }
        }
        self.repair(x);
    }

    /// Reverts features that are not needed for validity, then moves the row
    /// back along the segment towards the instance as far as validity allows.
    fn refine(&self, mut x: Vec<f64>) -> Vec<f64> {
        let mut changed: Vec<usize> = self.mutable.iter().copied().filter(|&j| x[j] != self.instance[j]).collect();
        changed.sort_by(|&a, &b| {
            let da = (x[a] - self.instance[a]).abs() / self.scale[a];
            let db = (x[b] - self.instance[b]).abs() / self.scale[b];
            da.total_cmp(&db).then(a.cmp(&b))
        });
        for j in changed {
            let keep = x[j];
            x[j] = self.instance[j];
            if !self.is_valid(&x) {
                x[j] = keep;
            }
        }
        let at = |t: f64| -> Vec<f64> {
            let mut y: Vec<f64> = self.instance.iter().zip(&x).map(|(a, b)| a + t * (b - a)).collect();
            self.repair(&mut y);
            y
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if self.is_valid(&at(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let y = at(hi);
        if self.is_valid(&y) {
            y
        } else {
            x
        }
    }
}

fn tournament<'a>(pop: &'a [(Vec<f64>, f64)], rng: &mut ChaCha8Rng) -> &'a [f64] {
    let mut best = rng.random_range(0..pop.len());
    for _ in 0..2 {
        let c = rng.random_range(0..pop.len());
        if pop[c].1 < pop[best].1 {
            best = c;
        }
    }
    &pop[best].0
}

fn key(x: &[f64]) -> Vec<i64> {
    x.iter().map(|v| (v * 1e6).round() as i64).collect()
}

/// Searches for `config.k` rows that the model assigns the desired class,
/// changing only mutable features of `reference.schema`. Ranges and spreads
/// come from `reference`.
pub fn genetic_cf<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    reference: &Dataset,
    config: &CounterfactualConfig,
) -> Result<ExplainerOutput, ExplainerError> {
    let started = Instant::now();
    let schema = &reference.schema;
    check_dim(model.n_features(), instance)?;
    check_dim(schema.n_features(), instance)?;
    if config.k == 0 {
        return Err(ExplainerError::InvalidCount("k must be at least 1".into()));
    }
    if reference.is_empty() {
        return Err(ExplainerError::EmptyInput);
    }
    if config.population < 2 || !(config.mutation_scale > 0.0) {
        return Err(ExplainerError::InvalidCount("population must be at least 2 and mutation scale positive".into()));
    }
    let current = model.predict_class(instance);
    let desired = config.desired_class.unwrap_or(1 - current.min(1));
    let cfg = serde_json::json!({
        "k": config.k,
        "population": config.population,
        "generations": config.generations,
        "lambda_prox": config.lambda_prox,
        "lambda_div": config.lambda_div,
        "mutation_scale": config.mutation_scale,
        "refine_limit": config.refine_limit,
        "desired_class": desired,
        "distance": "l1_zscore_mutable",
        "selection": "greedy_diverse",
    });
    let names = schema.feature_names.clone();

    if current == desired {
        let row = SampleRow {
            row_id: None,
            values: instance.to_vec(),
            weight: 1.0,
            prediction: Some(model.predict(instance)),
            zero_change: true,
        };
        let payload = Payload::Samples(SampleSet { features: names, rows: vec![row] });
        return Ok(ExplainerOutput::new(GENETIC_CF, payload, Some(instance.to_vec()), config.seed, started, cfg));
    }

    let mutable: Vec<usize> = (0..instance.len()).filter(|&j| schema.mutability[j]).collect();
    if mutable.is_empty() {
        return Err(ExplainerError::NoValidCounterfactual);
    }
    let stds = reference.feature_stds();
    let ranges: Vec<(f64, f64)> = reference
        .feature_ranges()
        .into_iter()
        .zip(instance)
        .map(|((lo, hi), x)| (lo.min(*x), hi.max(*x)))
        .collect();
    let scale = stds
        .iter()
        .zip(&ranges)
        .map(|(s, (lo, hi))| if *s > 0.0 { *s } else if hi > lo { hi - lo } else { 1.0 })
        .collect();
    let space = Space {
        model,
        instance,
        mutable,
        scale,
        ranges,
        integer: schema.feature_kinds.iter().map(|k| *k == FeatureKind::Integer).collect(),
        desired,
        lambda_prox: config.lambda_prox,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.population;
    let mut pop: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|i| {
            let mut x = instance.to_vec();
            let sd = config.mutation_scale * (1.0 + 4.0 * i as f64 / n as f64);
            space.mutate(&mut x, &mut rng, sd);
            let l = space.loss(&x);
            (x, l)
        })
        .collect();
    let mut archive: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut record = |pop: &[(Vec<f64>, f64)], archive: &mut Vec<(Vec<f64>, f64)>| {
        for (x, l) in pop {
            if space.is_valid(x) && seen.insert(key(x)) {
                archive.push((x.clone(), *l));
            }
        }
    };
    record(&pop, &mut archive);

    for _ in 0..config.generations {
        pop.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut next: Vec<(Vec<f64>, f64)> = pop.iter().take(2).cloned().collect();
        while next.len() < n {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let mut child: Vec<f64> = a.iter().zip(b).map(|(x, y)| if rng.random::<bool>() { *x } else { *y }).collect();
            space.mutate(&mut child, &mut rng, config.mutation_scale);
            let l = space.loss(&child);
            next.push((child, l));
        }
        pop = next;
        record(&pop, &mut archive);
    }

    let mut refined: Vec<Vec<f64>> = Vec::new();
    let mut refined_keys = std::collections::BTreeSet::new();
    archive.sort_by(|a, b| a.1.total_cmp(&b.1));
    archive.truncate(config.refine_limit.max(config.k));
    for (x, _) in archive {
        let y = space.refine(x);
        if space.is_valid(&y) && refined_keys.insert(key(&y)) {
            refined.push(y);
        }
    }
    if refined.is_empty() {
        return Err(ExplainerError::NoValidCounterfactual);
    }

    let prox = |x: &[f64]| config.lambda_prox * space.distance(x);
    let mut chosen: Vec<Vec<f64>> = Vec::new();
    while chosen.len() < config.k && !refined.is_empty() {
        let score = |x: &[f64]| {
            let div = if chosen.is_empty() {
                0.0
            } else {
                chosen.iter().map(|c| space.pair_distance(c, x)).sum::<f64>() / chosen.len() as f64
            };
            config.lambda_div * div - prox(x)
        };
        let (best, _) = refined
            .iter()
            .enumerate()
            .map(|(i, x)| (i, score(x)))
            .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
        chosen.push(refined.swap_remove(best));
    }

    let mean_distance = chosen.iter().map(|x| space.distance(x)).sum::<f64>() / chosen.len() as f64;
    let found = chosen.len();
    let rows = chosen
        .into_iter()
        .map(|x| SampleRow {
            row_id: None,
            prediction: Some(model.predict(&x)),
            values: x,
            weight: 1.0,
            zero_change: false,
        })
        .collect();
    let payload = Payload::Samples(SampleSet { features: names, rows });
    let mut out = ExplainerOutput::new(GENETIC_CF, payload, Some(instance.to_vec()), config.seed, started, cfg);
    out.diagnostics.insert("mean_l1_zscore".into(), mean_distance);
    out.diagnostics.insert("found".into(), found as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DatasetSchema;
    use crate::models::{FnModel, LinearScore};

    fn reference(rows: Vec<Vec<f64>>, mutability: Vec<bool>) -> Dataset {
        let m = rows[0].len();
        let names: Vec<String> = (0..m).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut schema = DatasetSchema::numeric(&refs);
        schema.mutability = mutability;
        let n = rows.len();
        Dataset::new(schema, rows, vec![0; n]).unwrap()
    }

    #[test]
    fn threshold_model_reaches_the_boundary() {
        let model = FnModel::new(1, |x: &[f64]| if x[0] > 5.0 { 1.0 } else { 0.0 });
        let refd = reference((0..=100).map(|i| vec![i as f64 / 10.0]).collect(), vec![true]);
        let out = genetic_cf(&model, &[3.0], &refd, &CounterfactualConfig { k: 1, ..Default::default() }).unwrap();
        let x = out.samples().unwrap().rows[0].values[0];
        assert!(x > 5.0 && x <= 5.5, "{x}");
        let oracle = (0..=1000).map(|i| i as f64 * 0.01).find(|v| model.predict(&[*v]) >= 0.5).unwrap();
        assert!((x - 3.0) <= 1.1 * (oracle - 3.0));
    }

    #[test]
    fn already_desired_returns_instance() {
        let model = FnModel::new(1, |x: &[f64]| if x[0] > 5.0 { 1.0 } else { 0.0 });
        let refd = reference(vec![vec![0.0], vec![10.0]], vec![true]);
        let cfg = CounterfactualConfig { desired_class: Some(1), ..Default::default() };
        let out = genetic_cf(&model, &[7.0], &refd, &cfg).unwrap();
        let rows = &out.samples().unwrap().rows;
        assert_eq!(rows.len(), 1);
        assert!(rows[0].zero_change);
        assert_eq!(rows[0].values, vec![7.0]);
    }

    #[test]
    fn immutable_features_stay_fixed() {
        let model = LinearScore { weights: vec![1.0, 1.0, 1.0], bias: -4.0 };
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i % 5) as f64, (i % 7) as f64, (i % 3) as f64]).collect();
        let refd = reference(rows, vec![true, false, true]);
        let x = [0.5, 1.0, 0.5];
        let out = genetic_cf(&model, &x, &refd, &CounterfactualConfig::default()).unwrap();
        let s = out.samples().unwrap();
        assert!(!s.rows.is_empty());
        for r in &s.rows {
            assert_eq!(r.values[1], 1.0);
            assert_eq!(model.predict_class(&r.values), 1);
        }
    }

    #[test]
    fn no_mutable_features() {
        let model = FnModel::new(1, |x: &[f64]| if x[0] > 5.0 { 1.0 } else { 0.0 });
        let refd = reference(vec![vec![0.0], vec![10.0]], vec![false]);
        assert!(matches!(
            genetic_cf(&model, &[1.0], &refd, &CounterfactualConfig::default()),
            Err(ExplainerError::NoValidCounterfactual)
        ));
    }

    #[test]
    fn deterministic_for_seed() {
        let model = LinearScore { weights: vec![0.7, -0.4], bias: -1.0 };
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 5.0, (30 - i) as f64 / 7.0]).collect();
        let refd = reference(rows, vec![true, true]);
        let cfg = CounterfactualConfig::default();
        let a = genetic_cf(&model, &[0.5, 2.0], &refd, &cfg).unwrap();
        let b = genetic_cf(&model, &[0.5, 2.0], &refd, &cfg).unwrap();
        assert_eq!(a.payload, b.payload);
    }
}
