//! Tabular persistence: each output becomes a CSV table plus a JSON sidecar
//! holding the metadata needed to rebuild it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Condition, ExplainerOutput, FeatureAttribution, Interval, Payload, Rule, RuleSet, SampleRow, SampleSet};
use crate::registry::Modality;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed table: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSidecar {
    pub explainer_id: String,
    pub modality: Modality,
    pub seed: u64,
    pub instance: Option<Vec<f64>>,
    pub runtime_ms: u64,
    pub config: serde_json::Value,
    pub diagnostics: BTreeMap<String, f64>,
    pub features: Vec<String>,
    #[serde(default)]
    pub labels: Vec<String>,
    /// Model output on the instance, for attribution tables.
    #[serde(default)]
    pub prediction: Option<f64>,
    pub columns: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn num(s: &str, what: &str) -> Result<f64, TableError> {
    s.trim().parse().map_err(|_| TableError::Malformed(format!("bad {what}: {s:?}")))
}

fn opt_num(s: &str, what: &str) -> Result<Option<f64>, TableError> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        num(s, what).map(Some)
    }
}

fn parse_bound(s: &str) -> Result<Option<f64>, TableError> {
    match s.trim() {
        "-inf" | "inf" => Ok(None),
        other => num(other, "bound").map(Some),
    }
}

fn parse_antecedent(text: &str, features: &[String]) -> Result<Vec<Condition>, TableError> {
    if text.trim() == "TRUE" {
        return Ok(Vec::new());
    }
    text.split(" AND ")
        .map(|part| {
            let (name, iv) = part
                .split_once(" in ")
                .ok_or_else(|| TableError::Malformed(format!("condition {part:?}")))?;
            let index = features
                .iter()
                .position(|f| f == name.trim())
                .ok_or_else(|| TableError::Malformed(format!("unknown feature {name:?}")))?;
            let inner = iv
                .trim()
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(']').or_else(|| s.strip_suffix(')')))
                .ok_or_else(|| TableError::Malformed(format!("interval {iv:?}")))?;
            let (lo, hi) = inner
                .split_once(',')
                .ok_or_else(|| TableError::Malformed(format!("interval {iv:?}")))?;
            Ok(Condition {
                feature: features[index].clone(),
                index,
                interval: Interval { low: parse_bound(lo)?, high: parse_bound(hi)? },
            })
        })
        .collect()
}

impl ExplainerOutput {
    fn features(&self) -> &[String] {
        match &self.payload {
            Payload::Features(a) => &a.features,
            Payload::Samples(s) => &s.features,
            Payload::Rules(r) => &r.features,
        }
    }

    pub fn columns(&self) -> Vec<String> {
        let fixed = |c: &[&str]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match &self.payload {
            Payload::Features(_) => fixed(&["feature", "value", "attribution", "base_value"]),
            Payload::Samples(s) => {
                let mut cols = vec!["row_id".to_string()];
                cols.extend(s.features.iter().cloned());
                cols.extend(fixed(&["weight", "prediction", "zero_change"]));
                cols
            }
            Payload::Rules(_) => fixed(&["rule", "antecedent", "label", "coverage", "precision", "n_conditions"]),
        }
    }

    pub fn sidecar(&self) -> OutputSidecar {
        OutputSidecar {
            explainer_id: self.explainer_id.clone(),
            modality: self.modality,
            seed: self.seed,
            instance: self.instance.clone(),
            runtime_ms: self.runtime_ms,
            config: self.config.clone(),
            diagnostics: self.diagnostics.clone(),
            features: self.features().to_vec(),
            labels: match &self.payload {
                Payload::Rules(r) => r.labels.clone(),
                _ => Vec::new(),
            },
            prediction: self.attributions().map(|a| a.prediction),
            columns: self.columns(),
        }
    }

    pub fn to_csv(&self) -> Result<String, TableError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns())?;
        match &self.payload {
            Payload::Features(a) => {
                for (j, f) in a.features.iter().enumerate() {
                    let value = self.instance.as_ref().map(|x| x[j]);
                    w.write_record([f.clone(), opt(value), a.attributions[j].to_string(), a.base_value.to_string()])?;
                }
            }
            Payload::Samples(s) => {
                for r in &s.rows {
                    let mut rec = vec![r.row_id.map(|i| i.to_string()).unwrap_or_default()];
                    rec.extend(r.values.iter().map(f64::to_string));
                    rec.push(r.weight.to_string());
                    rec.push(opt(r.prediction));
                    rec.push(r.zero_change.to_string());
                    w.write_record(rec)?;
                }
            }
            Payload::Rules(rs) => {
                for (i, r) in rs.rules.iter().enumerate() {
                    w.write_record([
                        (i + 1).to_string(),
                        r.antecedent(),
                        r.label.to_string(),
                        r.coverage.to_string(),
                        r.precision.to_string(),
                        r.len().to_string(),
                    ])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| TableError::Malformed(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| TableError::Malformed(e.to_string()))
    }

    /// Rebuilds an output from its CSV table and sidecar.
    pub fn from_table(csv_text: &str, sidecar: &OutputSidecar) -> Result<ExplainerOutput, TableError> {
        let mut r = csv::Reader::from_reader(csv_text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != sidecar.columns {
            return Err(TableError::Malformed("header does not match sidecar columns".into()));
        }
        let records: Vec<csv::StringRecord> = r.records().collect::<Result<_, _>>()?;
        let m = sidecar.features.len();
        let payload = match sidecar.modality {
            Modality::Features => {
                let mut attributions = Vec::with_capacity(records.len());
                let mut base_value = 0.0;
                for (j, rec) in records.iter().enumerate() {
                    if sidecar.features.get(j).map(String::as_str) != Some(&rec[0]) {
                        return Err(TableError::Malformed(format!("feature row {j} out of order")));
                    }
                    attributions.push(num(&rec[2], "attribution")?);
                    base_value = num(&rec[3], "base_value")?;
                }
                if attributions.len() != m {
                    return Err(TableError::Malformed("attribution count differs from feature count".into()));
                }
                Payload::Features(FeatureAttribution {
                    features: sidecar.features.clone(),
                    attributions,
                    base_value,
                    prediction: sidecar.prediction.unwrap_or(f64::NAN),
                })
            }
            Modality::Samples => {
                let rows = records
                    .iter()
                    .map(|rec| {
                        let row_id = if rec[0].is_empty() {
                            None
                        } else {
                            Some(rec[0].parse().map_err(|_| TableError::Malformed(format!("row id {:?}", &rec[0])))?)
                        };
                        let values = (1..=m).map(|j| num(&rec[j], "value")).collect::<Result<_, _>>()?;
                        Ok(SampleRow {
                            row_id,
                            values,
                            weight: num(&rec[m + 1], "weight")?,
                            prediction: opt_num(&rec[m + 2], "prediction")?,
                            zero_change: &rec[m + 3] == "true",
                        })
                    })
                    .collect::<Result<_, TableError>>()?;
                Payload::Samples(SampleSet { features: sidecar.features.clone(), rows })
            }
            Modality::Rules => {
                let rules = records
                    .iter()
                    .map(|rec| {
                        Ok(Rule {
                            conditions: parse_antecedent(&rec[1], &sidecar.features)?,
                            label: rec[2].parse().map_err(|_| TableError::Malformed(format!("label {:?}", &rec[2])))?,
                            coverage: num(&rec[3], "coverage")?,
                            precision: num(&rec[4], "precision")?,
                        })
                    })
                    .collect::<Result<_, TableError>>()?;
                Payload::Rules(RuleSet { features: sidecar.features.clone(), labels: sidecar.labels.clone(), rules })
            }
        };
        Ok(ExplainerOutput {
            explainer_id: sidecar.explainer_id.clone(),
            modality: sidecar.modality,
            payload,
            instance: sidecar.instance.clone(),
            seed: sidecar.seed,
            runtime_ms: sidecar.runtime_ms,
            config: sidecar.config.clone(),
            diagnostics: sidecar.diagnostics.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::{extract_rules, kernel_shap, protodash, ProtodashConfig, RuleConfig, ShapConfig};
    use crate::ingest::{Dataset, DatasetSchema};
    use crate::models::FnModel;

    fn fixture() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.3, ((i * 7) % 11) as f64]).collect();
        Dataset::new(DatasetSchema::numeric(&["a b", "c,d"]), rows, vec![0; 30]).unwrap()
    }

    fn round_trip(out: &ExplainerOutput) {
        let csv = out.to_csv().unwrap();
        let side: OutputSidecar = serde_json::from_str(&serde_json::to_string(&out.sidecar()).unwrap()).unwrap();
        assert_eq!(&ExplainerOutput::from_table(&csv, &side).unwrap(), out);
    }

    #[test]
    fn every_modality_round_trips() {
        let d = fixture();
        let model = FnModel::new(2, |x: &[f64]| if x[0] > 4.1 && x[1] < 6.0 { 0.8 } else { 0.1 });
        round_trip(&kernel_shap(&model, &[5.0, 2.0], &d, &ShapConfig::default()).unwrap());
        round_trip(&protodash(&d, &d, &ProtodashConfig { m: 3, ..Default::default() }).unwrap());
        round_trip(&extract_rules(&model, &d, &RuleConfig { surrogate_depth: Some(3), min_leaf: 2 }).unwrap());
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let d = fixture();
        let out = protodash(&d, &d, &ProtodashConfig { m: 2, ..Default::default() }).unwrap();
        let mut side = out.sidecar();
        side.columns.pop();
        assert!(matches!(ExplainerOutput::from_table(&out.to_csv().unwrap(), &side), Err(TableError::Malformed(_))));
    }
}
