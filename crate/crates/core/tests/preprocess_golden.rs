use std::path::Path;

use amalgam_core::preprocess::{run_pipeline, PreprocessConfig, Step};
use amalgam_core::synthetic::noisy_review_corpus;

struct Row {
    steps: Vec<Step>,
    raw: String,
    expected: Option<String>,
}

fn rows() -> Vec<Row> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/review_pipeline.tsv");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let steps = match f[0] {
                "all" => Step::ALL.to_vec(),
                s => s.split(',').map(|n| Step::parse(n).unwrap()).collect(),
            };
            Row {
                steps,
                raw: f[1].to_string(),
                expected: (f[2] != "DROP").then(|| f[2].to_string()),
            }
        })
        .collect()
}

#[test]
fn golden_rows_reproduce_exactly() {
    let rows = rows();
    assert_eq!(rows.len(), 7);
    for (i, row) in rows.iter().enumerate() {
        let out = run_pipeline(&row.raw, &PreprocessConfig::only(&row.steps)).unwrap();
        assert_eq!(out.text, row.expected, "row {}", i + 1);
        if row.expected.is_none() {
            assert!(out.drop.is_some());
        }
    }
}

#[test]
fn each_golden_row_changes_only_in_its_step() {
    for row in rows().iter().filter(|r| r.steps.len() == 1) {
        let out = run_pipeline(&row.raw, &PreprocessConfig::only(&row.steps)).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(out.reports[0].changes > 0, "{}", row.steps[0]);
    }
}

#[test]
fn pipeline_is_idempotent_on_corpus() {
    let config = PreprocessConfig::default();
    let corpus = noisy_review_corpus(1000, 11);
    let mut kept = 0;
    for line in &corpus {
        let once = run_pipeline(line, &config).unwrap();
        if let Some(text) = once.text {
            kept += 1;
            let twice = run_pipeline(&text, &config).unwrap();
            assert_eq!(twice.text.as_deref(), Some(text.as_str()), "raw {line:?}");
            assert!(twice.reports.iter().all(|r| r.changes == 0), "raw {line:?}");
        }
    }
    assert!(kept > 800 && kept < 1000, "kept {kept}");
}

#[test]
fn filter_is_a_function_of_text() {
    let config = PreprocessConfig::default();
    for line in noisy_review_corpus(200, 3) {
        let a = run_pipeline(&line, &config).unwrap();
        let b = run_pipeline(&line, &config).unwrap();
        assert_eq!(a, b);
    }
}
