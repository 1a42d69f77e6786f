//! Modality-keyed quality metrics for explainer outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explainers::{apply_rules, median_heuristic_width, rbf, zscore_rows, ExplainerOutput, FeatureAttribution, Rule, SampleSet};
use crate::ingest::Dataset;
use crate::models::Predictor;
use crate::registry::{MetricId, Modality};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("attributions or prediction deltas have zero variance")]
    ZeroVariance,
    #[error("rule set is empty")]
    EmptyRuleSet,
    #[error("no rule covers row {0}")]
    NoCoveringRule(usize),
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("kernel width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("weights must be nonnegative with a positive sum")]
    BadWeights,
    #[error("{metric} does not apply to {modality:?} outputs")]
    WrongModality { metric: MetricId, modality: Modality },
    #[error("input is empty")]
    EmptyInput,
    #[error("row has {got} values, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric_id: MetricId,
    pub value: f64,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_instance_values: Option<Vec<f64>>,
    pub config_echo: serde_json::Value,
}

impl MetricReport {
    fn scalar(metric_id: MetricId, modality: Modality, value: f64, config_echo: serde_json::Value) -> Self {
        MetricReport { metric_id, value, modality, per_instance_values: None, config_echo }
    }

    /// Mean of per-instance values; `None` when `values` is empty.
    pub fn from_instances(
        metric_id: MetricId,
        modality: Modality,
        values: Vec<f64>,
        config_echo: serde_json::Value,
    ) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let value = values.iter().sum::<f64>() / values.len() as f64;
        Some(MetricReport { metric_id, value, modality, per_instance_values: Some(values), config_echo })
    }

    /// Pools per-instance reports of one metric into a single mean report.
    pub fn pool(reports: &[MetricReport]) -> Option<Self> {
        let first = reports.first()?;
        let values: Vec<f64> = reports
            .iter()
            .flat_map(|r| r.per_instance_values.clone().unwrap_or_else(|| vec![r.value]))
            .collect();
        Self::from_instances(first.metric_id, first.modality, values, first.config_echo.clone())
    }
}

fn check(expected: usize, row: &[f64]) -> Result<(), MetricError> {
    if row.len() != expected {
        return Err(MetricError::DimensionMismatch { expected, got: row.len() });
    }
    Ok(())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between attributions and the prediction drop caused
/// by mean-imputing each feature in turn.
pub fn faithfulness<P: Predictor + ?Sized>(
    model: &P,
    attributions: &FeatureAttribution,
    instance: &[f64],
    background: &Dataset,
) -> Result<MetricReport, MetricError> {
    let m = model.n_features();
    check(m, instance)?;
    check(m, &attributions.attributions)?;
    if background.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let means = background.feature_means();
    let fx = model.predict(instance);
    let deltas: Vec<f64> = (0..m)
        .map(|i| {
            let mut x = instance.to_vec();
            x[i] = means[i];
            fx - model.predict(&x)
        })
        .collect();
    let value = pearson(&attributions.attributions, &deltas).ok_or(MetricError::ZeroVariance)?;
    let echo = serde_json::json!({ "baseline": "background_mean", "correlation": "pearson", "perturbation": "single_feature_mean_imputation" });
    Ok(MetricReport {
        metric_id: MetricId::Faithfulness,
        value,
        modality: Modality::Features,
        per_instance_values: Some(vec![value]),
        config_echo: echo,
    })
}

/// 1 when restoring features from the mean row in increasing order of
/// |attribution| yields non-decreasing absolute prediction steps, else 0.
pub fn monotonicity<P: Predictor + ?Sized>(
    model: &P,
    attributions: &FeatureAttribution,
    instance: &[f64],
    background: &Dataset,
) -> Result<MetricReport, MetricError> {
    let m = model.n_features();
    check(m, instance)?;
    check(m, &attributions.attributions)?;
    if background.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut order = attributions.ranking();
    order.reverse();
    let mut x = background.feature_means();
    let mut prev = model.predict(&x);
    let mut steps = Vec::with_capacity(m);
    for i in order {
        x[i] = instance[i];
        let next = model.predict(&x);
        steps.push((next - prev).abs());
        prev = next;
    }
    let tol = 1e-12;
    let ok = steps.windows(2).all(|w| w[1] >= w[0] - tol);
    let value = if ok { 1.0 } else { 0.0 };
    let echo = serde_json::json!({
        "variant": "boolean_nondecreasing_steps",
        "order": "increasing_abs_attribution",
        "baseline": "background_mean",
        "tolerance": tol,
    });
    Ok(MetricReport {
        metric_id: MetricId::Monotonicity,
        value,
        modality: Modality::Features,
        per_instance_values: Some(vec![value]),
        config_echo: echo,
    })
}

pub fn avg_rule_length(rules: &[Rule]) -> Result<MetricReport, MetricError> {
    if rules.is_empty() {
        return Err(MetricError::EmptyRuleSet);
    }
    let value = rules.iter().map(|r| r.len() as f64).sum::<f64>() / rules.len() as f64;
    Ok(MetricReport::scalar(
        MetricId::AvgRuleLength,
        Modality::Rules,
        value,
        serde_json::json!({ "unit": "merged_conditions_per_rule", "n_rules": rules.len() }),
    ))
}

/// Share of rows on which the rules agree with the model's predicted class.
pub fn fidelity<P: Predictor + ?Sized>(rules: &[Rule], model: &P, data: &Dataset) -> Result<MetricReport, MetricError> {
    if rules.is_empty() {
        return Err(MetricError::EmptyRuleSet);
    }
    if data.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut agree = 0usize;
    for (i, row) in data.rows.iter().enumerate() {
        let label = apply_rules(rules, row).map_err(|_| MetricError::NoCoveringRule(i))?;
        if label == model.predict_class(row) {
            agree += 1;
        }
    }
    Ok(MetricReport::scalar(
        MetricId::Fidelity,
        Modality::Rules,
        agree as f64 / data.len() as f64,
        serde_json::json!({ "reference": "model_predicted_class", "rows": data.len() }),
    ))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean pairwise Euclidean distance between samples in raw feature units.
pub fn diversity(samples: &SampleSet) -> Result<MetricReport, MetricError> {
    let n = samples.rows.len();
    if n < 2 {
        return Err(MetricError::TooFewSamples(n));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += euclid(&samples.rows[i].values, &samples.rows[j].values);
            pairs += 1;
        }
    }
    Ok(MetricReport::scalar(
        MetricId::Diversity,
        Modality::Samples,
        total / pairs as f64,
        serde_json::json!({ "distance": "euclidean", "units": "raw", "pairs": pairs }),
    ))
}

/// Squared weighted MMD between weighted prototypes and data under an RBF
/// kernel, clamped at zero. Rows are compared as given.
pub fn mmd_squared(prototypes: &[Vec<f64>], weights: &[f64], data: &[Vec<f64>], sigma: f64) -> Result<f64, MetricError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MetricError::NonPositiveWidth(sigma));
    }
    if prototypes.is_empty() || data.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let total: f64 = weights.iter().sum();
    if weights.len() != prototypes.len() || weights.iter().any(|w| *w < 0.0) || !(total > 0.0) {
        return Err(MetricError::BadWeights);
    }
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let nd = data.len() as f64;
    let mut pp = 0.0;
    for (a, pa) in prototypes.iter().enumerate() {
        for (b, pb) in prototypes.iter().enumerate() {
            pp += w[a] * w[b] * rbf(pa, pb, sigma);
        }
    }
    let pd: f64 = prototypes
        .iter()
        .zip(&w)
        .map(|(p, wp)| wp * data.iter().map(|d| rbf(p, d, sigma)).sum::<f64>())
        .sum::<f64>()
        / nd;
    let mut dd = 0.0;
    for (i, a) in data.iter().enumerate() {
        dd += 1.0;
        for b in &data[i + 1..] {
            dd += 2.0 * rbf(a, b, sigma);
        }
    }
    dd /= nd * nd;
    Ok((pp - 2.0 * pd + dd).max(0.0))
}

/// Non-representativeness of a weighted sample set against `data`. With
/// `scaling` set to per-feature means and spreads, both sides are z-scored
/// first.
pub fn non_representativeness(
    samples: &SampleSet,
    data: &Dataset,
    sigma: f64,
    scaling: Option<(&[f64], &[f64])>,
) -> Result<MetricReport, MetricError> {
    let rows: Vec<Vec<f64>> = samples.rows.iter().map(|r| r.values.clone()).collect();
    let weights: Vec<f64> = samples.rows.iter().map(|r| r.weight).collect();
    let (p, d) = match scaling {
        Some((means, stds)) => (zscore_rows(&rows, means, stds), zscore_rows(&data.rows, means, stds)),
        None => (rows, data.rows.clone()),
    };
    let value = mmd_squared(&p, &weights, &d, sigma)?;
    Ok(MetricReport::scalar(
        MetricId::NonRepresentativeness,
        Modality::Samples,
        value,
        serde_json::json!({
            "statistic": "weighted_mmd_squared",
            "kernel": "rbf",
            "kernel_width": sigma,
            "space": if scaling.is_some() { "background_zscore" } else { "raw" },
            "weights": "normalized",
            "reference_rows": data.len(),
        }),
    ))
}

/// Runs one registry metric on an explainer output. `background` supplies
/// imputation means and the z-score space; `target` is the row set the
/// output is judged against (fidelity rows, representativeness reference).
pub fn compute_metric<P: Predictor + ?Sized>(
    metric: MetricId,
    output: &ExplainerOutput,
    model: &P,
    background: &Dataset,
    target: &Dataset,
) -> Result<MetricReport, MetricError> {
    let wrong = || MetricError::WrongModality { metric, modality: output.modality };
    match metric {
        MetricId::Faithfulness | MetricId::Monotonicity => {
            let attr = output.attributions().ok_or_else(wrong)?;
            let instance = output.instance.as_deref().ok_or(MetricError::EmptyInput)?;
            if metric == MetricId::Faithfulness {
                faithfulness(model, attr, instance, background)
            } else {
                monotonicity(model, attr, instance, background)
            }
        }
        MetricId::AvgRuleLength => avg_rule_length(&output.rules().ok_or_else(wrong)?.rules),
        MetricId::Fidelity => fidelity(&output.rules().ok_or_else(wrong)?.rules, model, target),
        MetricId::Diversity => diversity(output.samples().ok_or_else(wrong)?),
        MetricId::NonRepresentativeness => {
            let samples = output.samples().ok_or_else(wrong)?;
            if background.is_empty() {
                return Err(MetricError::EmptyInput);
            }
            let (means, stds) = (background.feature_means(), background.feature_stds());
            let sigma = match output.diagnostics.get("kernel_width") {
                Some(s) => *s,
                None => median_heuristic_width(&zscore_rows(&background.rows, &means, &stds), 256, output.seed),
            };
            non_representativeness(samples, target, sigma, Some((&means, &stds)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::{exact_shapley, SampleRow};
    use crate::ingest::DatasetSchema;
    use crate::models::{FnModel, LinearScore};
    use proptest::prelude::*;

    fn ds(rows: Vec<Vec<f64>>) -> Dataset {
        let m = rows[0].len();
        let names: Vec<String> = (0..m).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let n = rows.len();
        Dataset::new(DatasetSchema::numeric(&refs), rows, vec![0; n]).unwrap()
    }

    fn set(rows: Vec<Vec<f64>>, weights: Vec<f64>) -> SampleSet {
        SampleSet {
            features: (0..rows[0].len()).map(|i| format!("x{i}")).collect(),
            rows: rows
                .into_iter()
                .zip(weights)
                .map(|(values, weight)| SampleRow { row_id: None, values, weight, prediction: None, zero_change: false })
                .collect(),
        }
    }

    fn linear_fixture() -> (LinearScore, Dataset, Vec<f64>) {
        let model = LinearScore { weights: vec![0.5, -1.5, 2.0], bias: 0.1 };
        let bg = ds(vec![vec![0.0, 1.0, 2.0], vec![2.0, 0.0, 1.0], vec![1.0, 2.0, 0.0]]);
        (model, bg, vec![3.0, 0.5, -1.0])
    }

    #[test]
    fn linear_faithfulness_is_one_and_negated_is_minus_one() {
        let (model, bg, x) = linear_fixture();
        let out = exact_shapley(&model, &x, &bg).unwrap();
        let attr = out.attributions().unwrap().clone();
        assert!((faithfulness(&model, &attr, &x, &bg).unwrap().value - 1.0).abs() < 1e-12);
        let neg = FeatureAttribution { attributions: attr.attributions.iter().map(|v| -v).collect(), ..attr };
        assert!((faithfulness(&model, &neg, &x, &bg).unwrap().value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn faithfulness_zero_variance() {
        let model = FnModel::new(2, |_: &[f64]| 0.4);
        let bg = ds(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        let attr = FeatureAttribution { features: vec!["a".into(), "b".into()], attributions: vec![0.0, 0.0], base_value: 0.4, prediction: 0.4 };
        assert_eq!(faithfulness(&model, &attr, &[2.0, 2.0], &bg), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn monotonicity_single_feature_and_violation() {
        let model = FnModel::new(1, |x: &[f64]| x[0]);
        let bg = ds(vec![vec![0.0]]);
        let attr = FeatureAttribution { features: vec!["a".into()], attributions: vec![1.0], base_value: 0.0, prediction: 1.0 };
        assert_eq!(monotonicity(&model, &attr, &[1.0], &bg).unwrap().value, 1.0);

        let model = LinearScore { weights: vec![1.0, 0.1], bias: 0.0 };
        let bg = ds(vec![vec![0.0, 0.0]]);
        let attr = FeatureAttribution { features: vec!["a".into(), "b".into()], attributions: vec![0.1, 1.0], base_value: 0.0, prediction: 1.1 };
        assert_eq!(monotonicity(&model, &attr, &[1.0, 1.0], &bg).unwrap().value, 0.0);
        let right = FeatureAttribution { attributions: vec![1.0, 0.1], ..attr };
        assert_eq!(monotonicity(&model, &right, &[1.0, 1.0], &bg).unwrap().value, 1.0);
    }

    #[test]
    fn diversity_definitions() {
        assert_eq!(diversity(&set(vec![vec![1.0, 2.0]; 3], vec![1.0; 3])).unwrap().value, 0.0);
        assert_eq!(diversity(&set(vec![vec![0.0, 0.0], vec![3.0, 4.0]], vec![1.0; 2])).unwrap().value, 5.0);
        assert_eq!(diversity(&set(vec![vec![0.0]], vec![1.0])), Err(MetricError::TooFewSamples(1)));
    }

    #[test]
    fn mmd_of_a_set_with_itself_is_zero() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * i % 5) as f64]).collect();
        let v = mmd_squared(&rows, &vec![1.0; rows.len()], &rows, 1.3).unwrap();
        assert!(v.abs() < 1e-9);
        assert!(matches!(mmd_squared(&rows, &vec![1.0; 12], &rows, 0.0), Err(MetricError::NonPositiveWidth(_))));
        assert_eq!(mmd_squared(&rows, &vec![0.0; 12], &rows, 1.0), Err(MetricError::BadWeights));
    }

    #[test]
    fn rule_metrics() {
        assert_eq!(avg_rule_length(&[]), Err(MetricError::EmptyRuleSet));
    }

    proptest! {
        #[test]
        fn mmd_is_symmetric_and_permutation_invariant(
            a in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..10),
            b in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..10),
        ) {
            let p: Vec<Vec<f64>> = a.iter().map(|&(x, y)| vec![x, y]).collect();
            let d: Vec<Vec<f64>> = b.iter().map(|&(x, y)| vec![x, y]).collect();
            let pd = mmd_squared(&p, &vec![1.0; p.len()], &d, 1.0).unwrap();
            let dp = mmd_squared(&d, &vec![1.0; d.len()], &p, 1.0).unwrap();
            prop_assert!((pd - dp).abs() < 1e-9);
            let mut rev = p.clone();
            rev.reverse();
            prop_assert!((mmd_squared(&rev, &vec![1.0; p.len()], &d, 1.0).unwrap() - pd).abs() < 1e-9);
            let s1 = set(p.clone(), vec![1.0; p.len()]);
            let s2 = set(rev, vec![1.0; p.len()]);
            if p.len() >= 2 {
                prop_assert!((diversity(&s1).unwrap().value - diversity(&s2).unwrap().value).abs() < 1e-9);
            }
        }

        #[test]
        fn linear_faithfulness_identity(
            w in prop::collection::vec(-3.0f64..3.0, 2..7),
            seed in 0u64..1000,
        ) {
            let m = w.len();
            let model = LinearScore { weights: w, bias: 0.2 };
            let rows: Vec<Vec<f64>> = (0..5).map(|r| (0..m).map(|j| ((seed + r * 31 + j as u64 * 7) % 13) as f64 - 6.0).collect()).collect();
            let bg = ds(rows);
            let x: Vec<f64> = (0..m).map(|j| ((seed * 3 + j as u64 * 5) % 11) as f64 - 5.0).collect();
            let out = exact_shapley(&model, &x, &bg).unwrap();
            match faithfulness(&model, out.attributions().unwrap(), &x, &bg) {
                Ok(r) => prop_assert!((r.value - 1.0).abs() < 1e-6),
                Err(e) => prop_assert_eq!(e, MetricError::ZeroVariance),
            }
        }
    }
}
