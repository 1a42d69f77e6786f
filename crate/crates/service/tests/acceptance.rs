//! Acceptance gate. Prints one PASS/FAIL line per criterion. Criteria listed
//! in `KNOWN_RED` are expected to fail (see the README); the test fails if
//! the set of failing criteria changes in either direction.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xplain_core::explainers::{
    exact_shapley, extract_rules, genetic_cf, kernel_shap, median_heuristic_width, zscore_rows,
    CounterfactualConfig, ProtodashProblem, RuleConfig, ShapConfig,
};
use xplain_core::ingest::{Dataset, DatasetSchema};
use xplain_core::metrics::{faithfulness, fidelity};
use xplain_core::models::{
    fit_tree, select_best, train_forest, train_tree, FnModel, ForestConfig, LinearScore, ModelKind, Predictor,
    TreeConfig,
};
use xplain_core::pipeline::{
    prepare_data, run_stage_eval, train_candidates, EvalStage, Pipeline, PipelineConfig, StageReport,
};
use xplain_core::registry::{ExplanationType, MetricId};
use xplain_core::synthesis::rule_sentence;

const KNOWN_RED: &[u32] = &[1, 4, 8];

const LISTING: &str = "How did the model justify predicting Diabetes for a 55-year-old male with a BMI of 18 and a Diabetes Pedigree Function of 0.25?";
const CONTEXTUAL: &str = "What contextual factors matter here?";

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(store: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.resolve_against(&repo_root());
    cfg.store_root = store.to_path_buf();
    cfg
}

fn synthetic(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Dataset {
    let names: Vec<String> = (0..rows[0].len()).map(|i| format!("f{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Dataset::new(DatasetSchema::numeric(&refs), rows, labels).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn criterion_1(cfg: &PipelineConfig) -> Verdict {
    let t = Instant::now();
    let (_, train, test) = prepare_data(cfg).unwrap();
    let candidates = train_candidates(cfg, &train, &test).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let band = |k: ModelKind| match k {
        ModelKind::LogisticRegression => (0.72, 0.82),
        ModelKind::DecisionTree => (0.67, 0.79),
        ModelKind::RandomForest => (0.69, 0.81),
    };
    let mut in_bands = true;
    let mut parts = Vec::new();
    for (m, metrics) in &candidates {
        let (lo, hi) = band(m.kind);
        in_bands &= (lo..=hi).contains(&metrics.f1);
        parts.push(format!("{} F1 {:.3} in [{lo}, {hi}]", m.kind.short(), metrics.f1));
    }
    let best = select_best(&candidates).unwrap().kind;
    let pass = in_bands && best == ModelKind::LogisticRegression && secs < 30.0;
    verdict(pass, format!("{}; select_best = {}; {secs:.1}s", parts.join(", "), best.short()))
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_diff: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut fixtures = 0;
    let mut check = |model: &dyn Predictor, x: &[f64], bg: &Dataset| {
        let k = kernel_shap(model, x, bg, &ShapConfig::default()).unwrap();
        let e = exact_shapley(model, x, bg).unwrap();
        let (ka, ea) = (k.attributions().unwrap(), e.attributions().unwrap());
        for (a, b) in ka.attributions.iter().zip(&ea.attributions) {
            worst_diff = worst_diff.max((a - b).abs());
        }
        for a in [ka, ea] {
            let gap = a.base_value + a.attributions.iter().sum::<f64>() - model.predict(x);
            worst_gap = worst_gap.max(gap.abs());
        }
        fixtures += 1;
    };
    for i in 0..8 {
        let m = 2 + i % 7;
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bg = synthetic(random_rows(&mut rng, 25, m), vec![0; 25]);
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        check(&LinearScore { weights, bias: 0.1 }, &x, &bg);
    }
    for i in 0..8 {
        let m = 2 + i % 7;
        let rows = random_rows(&mut rng, 60, m);
        let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[0] + r[m - 1] * r[1] > 0.5)).collect();
        let tree = fit_tree(&rows, &labels, m, &TreeConfig { max_depth: Some(5), min_leaf: 2 });
        let bg = synthetic(rows.clone(), labels);
        check(&tree, &rows[3], &bg);
    }
    for i in 0..4 {
        let m = 3 + i;
        let rows = random_rows(&mut rng, 60, m);
        let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[0] - r[2] > 0.0)).collect();
        let bg = synthetic(rows.clone(), labels);
        let forest = train_forest(&bg, &ForestConfig { n_trees: 20, seed: i as u64, ..Default::default() }).unwrap();
        check(&forest, &rows[5], &bg);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = fixtures >= 20 && worst_diff <= 1e-3 && worst_gap <= 1e-6 && secs < 60.0;
    verdict(pass, format!("{fixtures} fixtures; max |kernel - exact| {worst_diff:.2e}; max efficiency gap {worst_gap:.2e}; {secs:.1}s"))
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let m = 3 + i % 6;
        let weights: Vec<f64> = (0..m)
            .map(|_| rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let bg = synthetic(random_rows(&mut rng, 20, m), vec![0; 20]);
        let means = bg.feature_means();
        let x: Vec<f64> = (0..m).map(|j| means[j] + (j as f64 + 1.0) * rng.random_range(0.5..1.5)).collect();
        let model = LinearScore { weights, bias: rng.random_range(-1.0..1.0) };
        let out = exact_shapley(&model, &x, &bg).unwrap();
        let r = faithfulness(&model, out.attributions().unwrap(), &x, &bg).unwrap();
        worst = worst.max((r.value - 1.0).abs());
    }
    verdict(worst <= 1e-6, format!("100 fixtures; max |faithfulness - 1| {worst:.2e}"))
}

fn brute_force(problem: &ProtodashProblem, n: usize, m: usize) -> f64 {
    fn walk(p: &ProtodashProblem, n: usize, m: usize, start: usize, cur: &mut Vec<usize>, best: &mut f64) {
        if cur.len() == m {
            let w = p.fit_weights(cur, &vec![0.0; m]);
            *best = best.max(p.objective(cur, &w));
            return;
        }
        for i in start..n {
            cur.push(i);
            walk(p, n, m, i + 1, cur, best);
            cur.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    walk(problem, n, m, 0, &mut Vec::new(), &mut best);
    best
}

/// Sets are 20 PIMA rows drawn with seeds 0..50, z-scored, with the
/// median-heuristic kernel width the explainer uses by default.
fn criterion_4(pima: &Dataset) -> Verdict {
    let mut ratios = Vec::new();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pos = sample(&mut rng, pima.len(), 20).into_vec();
        pos.sort_unstable();
        let sub = pima.select(&pos);
        let z = zscore_rows(&sub.rows, &sub.feature_means(), &sub.feature_stds());
        let problem = ProtodashProblem::new(&z, &z, median_heuristic_width(&z, 256, 7)).unwrap();
        for m in 1..=3 {
            let (sel, w, _) = problem.greedy(m);
            ratios.push(problem.objective(&sel, &w) / brute_force(&problem, 20, m));
        }
    }
    let below = ratios.iter().filter(|r| **r < 0.95).count();
    let worst = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(below == 0, format!("{} comparisons; worst greedy/optimum {worst:.4}; {below} below 0.95", ratios.len()))
}

fn criterion_5(p: &Pipeline) -> Verdict {
    let lr = p.candidate(ModelKind::LogisticRegression).unwrap();
    let mut total = 0;
    let mut flipped = 0;
    for row in p.test.rows.iter().take(20) {
        let out = genetic_cf(lr, row, &p.train, &CounterfactualConfig::default()).unwrap();
        let target = 1 - lr.predict_class(row);
        for r in &out.samples().unwrap().rows {
            if r.zero_change {
                continue;
            }
            total += 1;
            flipped += usize::from(lr.predict_class(&r.values) == target);
        }
    }
    let mut worst_ratio: f64 = 0.0;
    for (threshold, x0) in [(5.0, 3.0), (2.5, 7.0), (7.3, 1.1)] {
        let model = FnModel::new(1, move |x: &[f64]| if x[0] > threshold { 1.0 } else { 0.0 });
        let reference = synthetic((0..=100).map(|i| vec![i as f64 / 10.0]).collect(), vec![0; 101]);
        let cfg = CounterfactualConfig { k: 1, ..Default::default() };
        let x = genetic_cf(&model, &[x0], &reference, &cfg).unwrap().samples().unwrap().rows[0].values[0];
        let grid = (0..=10_000)
            .map(|i| i as f64 * 0.001)
            .filter(|v| model.predict_class(&[*v]) != model.predict_class(&[x0]))
            .map(|v| (v - x0).abs())
            .fold(f64::INFINITY, f64::min);
        worst_ratio = worst_ratio.max((x - x0).abs() / grid);
    }
    let pass = total > 0 && flipped == total && worst_ratio <= 1.1;
    verdict(pass, format!("{flipped}/{total} counterfactuals flip the LR class; worst 1-D L1 / grid optimum {worst_ratio:.3}"))
}

fn criterion_6(p: &Pipeline) -> Verdict {
    let schema = DatasetSchema::numeric(&["BMI"]);
    let bmi: Vec<Vec<f64>> = [24.0, 27.5, 30.0, 32.0, 32.5, 35.0, 38.0, 41.0].iter().map(|v| vec![*v]).collect();
    let labels: Vec<u8> = bmi.iter().map(|r| u8::from(r[0] > 32.25)).collect();
    let data = Dataset::new(schema, bmi, labels).unwrap();
    let model = FnModel::new(1, |x: &[f64]| if x[0] > 32.25 { 1.0 } else { 0.0 });
    let out = extract_rules(&model, &data, &RuleConfig { surrogate_depth: Some(3), min_leaf: 1 }).unwrap();
    let rs = out.rules().unwrap();
    let sentence = rs.rules.iter().find(|r| r.label == 0).map(|r| rule_sentence(r, &rs.labels)).unwrap_or_default();
    let shape_ok = rs.rules.len() == 2 && sentence == "IF BMI is less than or equal to 32.25, THEN label = 0";

    let tree = train_tree(&p.train, &TreeConfig { max_depth: None, min_leaf: 1 }).unwrap();
    let surrogate = extract_rules(&tree, &p.train, &RuleConfig { surrogate_depth: None, min_leaf: 1 }).unwrap();
    let rules = &surrogate.rules().unwrap().rules;
    let fid = fidelity(rules, &tree, &p.train).unwrap().value;
    let partition = p.train.rows.iter().all(|r| rules.iter().filter(|rule| rule.covers(r)).count() == 1);
    verdict(
        shape_ok && fid >= 0.95 && partition,
        format!("rule sentence {sentence:?}; self-surrogate fidelity {fid:.4}; partition {partition}"),
    )
}

fn criterion_7(p: &Pipeline) -> Verdict {
    let StageReport::Decompose(r) = run_stage_eval(p, EvalStage::Decompose).unwrap() else { unreachable!() };
    let min_exact = r.per_field.values().map(|f| f.exact.f1).fold(f64::INFINITY, f64::min);
    let ordered = r.per_field.values().all(|f| f.exact.f1 <= f.levenshtein.f1);
    let pass = r.n_items >= 100 && min_exact >= 0.95 && r.type_accuracy >= 0.95 && ordered;
    verdict(
        pass,
        format!("{} questions; min exact-match F1 {min_exact:.4}; type accuracy {:.4}; exact <= Levenshtein {ordered}", r.n_items, r.type_accuracy),
    )
}

fn criterion_8(p: &Pipeline) -> Verdict {
    let StageReport::Delegate(r) = run_stage_eval(p, EvalStage::Delegate).unwrap() else { unreachable!() };
    let all = [
        MetricId::AvgRuleLength,
        MetricId::Fidelity,
        MetricId::NonRepresentativeness,
        MetricId::Diversity,
        MetricId::Faithfulness,
        MetricId::Monotonicity,
    ];
    let complete = all.iter().all(|m| r.row(*m).is_some_and(|row| row.value.is_some() && !row.config_echo.is_null()));
    let faith = r.row(MetricId::Faithfulness).and_then(|row| row.value).unwrap_or(f64::NAN);
    let values: Vec<String> =
        r.rows.iter().map(|row| format!("{} {:.4}", row.metric.name(), row.value.unwrap_or(f64::NAN))).collect();
    verdict(
        complete && (0.56..=0.86).contains(&faith),
        format!("model {}; {}; faithfulness band [0.56, 0.86]", r.model_kind.short(), values.join(", ")),
    )
}

fn criterion_9(p: &Pipeline) -> Verdict {
    let StageReport::Synthesis(r) = run_stage_eval(p, EvalStage::Synthesis).unwrap() else { unreachable!() };
    let reached: Vec<_> = r.rows.iter().filter(|row| row.reached_synthesis).collect();
    let faithful = reached.iter().all(|row| row.scores.faithfulness == 1.0);
    let utilized = reached.iter().all(|row| row.scores.context_utilization >= 0.8);
    verdict(
        !reached.is_empty() && faithful && utilized,
        format!(
            "{} of {} questions reached synthesis; min faithfulness {:.4}; min context utilization {:.4}",
            r.n_reached, r.n_questions, r.min.faithfulness, r.min.context_utilization
        ),
    )
}

fn criterion_10(p: &Pipeline) -> Verdict {
    let a = p.ask(LISTING, None).unwrap();
    let b = p.ask(LISTING, None).unwrap();
    let metrics: Vec<MetricId> = a.metric_reports.iter().map(|m| m.metric_id).collect();
    let shape = a.explanation_type == ExplanationType::Rationale
        && a.explainer_outputs.iter().any(|o| o.explainer_id == "SurrogateRules")
        && metrics == [MetricId::AvgRuleLength, MetricId::Fidelity]
        && !a.texts.subset_text.is_empty()
        && !a.texts.explainer_text.is_empty();
    let same = serde_json::to_string(&a.without_run_identity()).unwrap()
        == serde_json::to_string(&b.without_run_identity()).unwrap();
    let reload = (|| -> Result<bool, xplain_core::pipeline::PipelineError> {
        let manifest = p.load_manifest(&a.run_id)?;
        let outputs = p.load_outputs(&a.run_id, &manifest)?;
        let rules_ok = outputs.iter().any(|o| o.rules().is_some_and(|r| !r.rules.is_empty()));
        Ok(p.load_rq(&a.run_id)? == a.rq
            && rules_ok
            && p.load_metrics(&a.run_id)?.reports == a.metric_reports
            && p.load_synthesis(&a.run_id)?.0 == a.texts
            && p.store().load(&a.run_id).map_err(xplain_core::pipeline::PipelineError::from)? == a)
    })()
    .unwrap_or(false);
    verdict(shape && same && reload, format!("record shape {shape}; rerun identical {same}; intermediates reload {reload}"))
}

fn criterion_11(p: Arc<Pipeline>, store: &Path) -> Verdict {
    let cfg_path = store.join("config.json");
    let cfg = config(store);
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_xplain"))
        .args(["--config", cfg_path.to_str().unwrap(), "ask", CONTEXTUAL])
        .output()
        .unwrap();
    let cli: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap_or_default();
    let cli_ok = out.status.code() == Some(0) && cli["explanation_type"] == "Contextual" && cli["supported"] == false;

    let rt = tokio::runtime::Runtime::new().unwrap();
    let (status, http) = rt.block_on(async {
        use http_body_util::BodyExt;
        use tower::ServiceExt;
        let req = axum::http::Request::builder()
            .method("POST")
            .uri("/ask")
            .header("content-type", "application/json")
            .body(axum::body::Body::from(serde_json::json!({ "question": CONTEXTUAL }).to_string()))
            .unwrap();
        let resp = xplain::router(p).oneshot(req).await.unwrap();
        let status = resp.status();
        let body = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice::<serde_json::Value>(&body).unwrap_or_default())
    });
    let http_ok = status == 200 && http["explanation_type"] == "Contextual" && http["supported"] == false;
    verdict(cli_ok && http_ok, format!("CLI exit {:?}, unsupported record {cli_ok}; HTTP {status}, unsupported record {http_ok}", out.status.code()))
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let pipeline = Arc::new(Pipeline::build(cfg.clone()).unwrap());

    let results: Vec<(u32, Verdict)> = vec![
        (1, criterion_1(&cfg)),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4(&pipeline.dataset)),
        (5, criterion_5(&pipeline)),
        (6, criterion_6(&pipeline)),
        (7, criterion_7(&pipeline)),
        (8, criterion_8(&pipeline)),
        (9, criterion_9(&pipeline)),
        (10, criterion_10(&pipeline)),
        (11, criterion_11(Arc::clone(&pipeline), dir.path())),
    ];
    for (n, v) in &results {
        println!("{} criterion {n}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failing: Vec<u32> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    assert_eq!(failing, KNOWN_RED, "failing criteria changed");
}
