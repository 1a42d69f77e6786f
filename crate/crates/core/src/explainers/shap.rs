//! Kernel SHAP and exact Shapley values under a mean-imputation value
//! function: features outside a coalition take their background mean.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dim, ExplainerError, ExplainerOutput, FeatureAttribution, Payload, EXACT_SHAPLEY, KERNEL_SHAP};
use crate::ingest::Dataset;
use crate::models::Predictor;

/// Largest feature count handled by full coalition enumeration.
pub const EXACT_MAX_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapConfig {
    /// Coalitions drawn when the feature count exceeds `exact_max_features`.
    pub n_coalition_samples: usize,
    pub exact_max_features: usize,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig { n_coalition_samples: 2048, exact_max_features: EXACT_MAX_FEATURES, seed: 7 }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn shap_kernel(m: usize, s: usize) -> f64 {
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

struct Game<'a, P: ?Sized> {
    model: &'a P,
    instance: &'a [f64],
    means: Vec<f64>,
}

impl<P: Predictor + ?Sized> Game<'_, P> {
    fn value(&self, members: impl Fn(usize) -> bool) -> f64 {
        let row: Vec<f64> = (0..self.instance.len())
            .map(|i| if members(i) { self.instance[i] } else { self.means[i] })
            .collect();
        self.model.predict(&row)
    }
}

fn prepare<'a, P: Predictor + ?Sized>(
    model: &'a P,
    instance: &'a [f64],
    background: &Dataset,
) -> Result<Game<'a, P>, ExplainerError> {
    let m = model.n_features();
    check_dim(m, instance)?;
    if background.is_empty() {
        return Err(ExplainerError::EmptyInput);
    }
    check_dim(m, &background.rows[0])?;
    let first = &background.rows[0];
    if background.rows.iter().all(|r| r == first) && first.as_slice() == instance {
        return Err(ExplainerError::DegenerateBackground);
    }
    Ok(Game { model, instance, means: background.feature_means() })
}

fn attribution_output(
    id: &str,
    background: &Dataset,
    instance: &[f64],
    phi: Vec<f64>,
    base_value: f64,
    prediction: f64,
    seed: u64,
    started: Instant,
    config: serde_json::Value,
) -> ExplainerOutput {
    let payload = Payload::Features(FeatureAttribution {
        features: background.schema.feature_names.clone(),
        attributions: phi,
        base_value,
        prediction,
    });
    let mut out = ExplainerOutput::new(id, payload, Some(instance.to_vec()), seed, started, config);
    for (name, mean) in background.schema.feature_names.iter().zip(background.feature_means()) {
        out.diagnostics.insert(format!("background_mean.{name}"), mean);
    }
    out
}

/// Kernel SHAP: weighted least squares over coalitions with the efficiency
/// constraint enforced exactly by eliminating the last attribution. With at
/// most `exact_max_features` features every proper coalition is enumerated.
pub fn kernel_shap<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    background: &Dataset,
    config: &ShapConfig,
) -> Result<ExplainerOutput, ExplainerError> {
    let started = Instant::now();
    let game = prepare(model, instance, background)?;
    let m = instance.len();
    let fx = model.predict(instance);
    let f0 = game.value(|_| false);
    let exact = m <= config.exact_max_features;

    let phi = if m == 1 {
        vec![fx - f0]
    } else {
        let coalitions: Vec<(Vec<bool>, f64)> = if exact {
            (1..(1u64 << m) - 1)
                .map(|mask| {
                    let z: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
                    let s = z.iter().filter(|&&b| b).count();
                    (z, shap_kernel(m, s))
                })
                .collect()
        } else {
            sample_coalitions(m, config.n_coalition_samples, config.seed)
        };
        solve_constrained(&game, &coalitions, fx, f0)?
    };

    let cfg = serde_json::json!({
        "value_function": "mean_imputation",
        "mode": if exact { "exact_enumeration" } else { "sampled" },
        "n_coalition_samples": config.n_coalition_samples,
        "exact_max_features": config.exact_max_features,
    });
    Ok(attribution_output(KERNEL_SHAP, background, instance, phi, f0, fx, config.seed, started, cfg))
}

/// Draws coalition sizes in proportion to the total kernel mass of each size,
/// then a uniform subset of that size. Sampled coalitions carry equal weight.
fn sample_coalitions(m: usize, n: usize, seed: u64) -> Vec<(Vec<bool>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mass: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total: f64 = mass.iter().sum();
    (0..n)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            let mut s = m - 1;
            for (k, w) in mass.iter().enumerate() {
                if u < *w {
                    s = k + 1;
                    break;
                }
                u -= w;
            }
            let mut z = vec![false; m];
            for i in sample(&mut rng, m, s) {
                z[i] = true;
            }
            (z, 1.0)
        })
        .collect()
}

fn solve_constrained<P: Predictor + ?Sized>(
    game: &Game<'_, P>,
    coalitions: &[(Vec<bool>, f64)],
    fx: f64,
    f0: f64,
) -> Result<Vec<f64>, ExplainerError> {
    let m = game.instance.len();
    let total = fx - f0;
    let k = m - 1;
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut aty = DVector::<f64>::zeros(k);
    for (z, w) in coalitions {
        let zm = f64::from(u8::from(z[k]));
        let y = game.value(|i| z[i]) - f0 - zm * total;
        let a: Vec<f64> = (0..k).map(|i| f64::from(u8::from(z[i])) - zm).collect();
        for i in 0..k {
            if a[i] == 0.0 {
                continue;
            }
            aty[i] += w * a[i] * y;
            for j in 0..k {
                ata[(i, j)] += w * a[i] * a[j];
            }
        }
    }
    let sol = ata.lu().solve(&aty).ok_or(ExplainerError::SingularSystem)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(ExplainerError::SingularSystem);
    }
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    phi.push(total - phi.iter().sum::<f64>());
    Ok(phi)
}

/// Exact Shapley values by enumerating every coalition.
pub fn exact_shapley<P: Predictor + ?Sized>(
    model: &P,
    instance: &[f64],
    background: &Dataset,
) -> Result<ExplainerOutput, ExplainerError> {
    let started = Instant::now();
    let m = instance.len();
    if m > EXACT_MAX_FEATURES {
        return Err(ExplainerError::TooManyFeatures { got: m, max: EXACT_MAX_FEATURES });
    }
    let game = prepare(model, instance, background)?;
    let values: Vec<f64> = (0..1usize << m).map(|mask| game.value(|i| mask >> i & 1 == 1)).collect();
    let factorial = |n: usize| (1..=n).fold(1.0, |acc, x| acc * x as f64);
    let weights: Vec<f64> = (0..m).map(|s| factorial(s) * factorial(m - s - 1) / factorial(m)).collect();
    let phi: Vec<f64> = (0..m)
        .map(|i| {
            (0..1usize << m)
                .filter(|mask| mask >> i & 1 == 0)
                .map(|mask| weights[mask.count_ones() as usize] * (values[mask | 1 << i] - values[mask]))
                .sum()
        })
        .collect();
    let cfg = serde_json::json!({ "value_function": "mean_imputation", "mode": "exact_enumeration" });
    Ok(attribution_output(EXACT_SHAPLEY, background, instance, phi, values[0], values[(1 << m) - 1], 0, started, cfg))
}
