use rbme::estimators::EstimatorKind;
use rbme::harness::{
    emit_svg, read_csv, render_svg, rows_to_csv, run_experiment, write_csv, ExperimentConfig, CSV_HEADER,
};

const GRID: &str = r#"
base_seed = 77
workers = 1
[grid]
d = 4
n = 8
N = 60
eps = [0.02, 0.05, 0.1]
alpha = 0.01
variant = "two-level"
adversary = ["mean-pull", "cluster"]
estimators = ["naive", "pooled", "mean-shift", "two-level"]
trials = 3
"#;

fn config(workers: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(GRID).unwrap();
    cfg.workers = workers;
    cfg
}

#[test]
fn rows_cover_every_unit_in_order() {
    let rows = run_experiment(&config(2)).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 4 * 3);
    assert!(rows.iter().all(|r| r.error_l2 >= 0.0 && r.runtime_ms == 0.0));
    let mut seeds: Vec<u64> = rows.iter().filter(|r| r.estimator == EstimatorKind::Naive).map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 3 * 2 * 3);
}

#[test]
fn worker_count_does_not_change_rows() {
    let one = rows_to_csv(&run_experiment(&config(1)).unwrap()).unwrap();
    let four = rows_to_csv(&run_experiment(&config(4)).unwrap()).unwrap();
    assert_eq!(one, four);
}

#[test]
fn csv_schema_is_plain() {
    let rows = run_experiment(&config(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    write_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), CSV_HEADER.len(), "{line}");
        for (name, value) in CSV_HEADER.iter().zip(&fields) {
            if ["variant", "adversary", "estimator", "converged"].contains(name) || value.is_empty() {
                continue;
            }
            assert!(value.parse::<f64>().is_ok(), "{name}={value}");
        }
    }
    assert_eq!(read_csv(&path).unwrap(), rows);
}

#[test]
fn svg_draws_one_line_per_estimator() {
    let rows = run_experiment(&config(1)).unwrap();
    let svg = render_svg(&rows, "eps").unwrap();
    assert_eq!(svg.matches("<polyline").count(), EstimatorKind::ALL.len());
    assert_eq!(svg.matches("<circle").count(), EstimatorKind::ALL.len() * 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chart.svg");
    emit_svg(&rows, "eps", &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), svg);
    assert_eq!(render_svg(&rows, "eps").unwrap(), svg);
}
