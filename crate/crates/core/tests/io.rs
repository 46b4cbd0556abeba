mod common;

use std::collections::BTreeMap;

use vqrim::config::ExperimentConfig;
use vqrim::dataset::{load_expression_csv, load_survival_csv, SurvivalRecord};
use vqrim::experiment::{ablate, run_experiment, write_ablation_csv};
use vqrim::export::{
    read_assignments, read_km_curves, write_assignments, write_expression_csv, write_km_curves, write_labels_csv,
    write_survival_csv, AssignmentTable,
};
use vqrim::survival::km_from_pairs;
use vqrim::synthetic::{generate_synthetic, SyntheticSpec};
use vqrim::Error;

#[test]
fn assignments_round_trip_at_written_precision() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(40);
    let probs = common::row_stochastic(25, 7, &mut r);
    let table = AssignmentTable {
        sample_ids: (0..25).map(|i| format!("s{i}")).collect(),
        labels: (0..25).map(|i| i % 7).collect(),
        probs: Some(probs),
    };
    let path = dir.path().join("a.csv");
    write_assignments(&path, &table).unwrap();
    let back = read_assignments(&path).unwrap();
    assert_eq!(back, table.rounded());
    // a second pass is lossless
    write_assignments(&path, &back).unwrap();
    assert_eq!(read_assignments(&path).unwrap(), back);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("sample_id,label,p_0,p_1,p_2,p_3,p_4,p_5,p_6\n"));
}

#[test]
fn km_curves_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(41);
    let mut curves = BTreeMap::new();
    for g in [0, 3, 4] {
        let subjects = common::exponential_group(30, 0.3 + g as f64, 0.3, &mut r);
        curves.insert(g, km_from_pairs(subjects.into_iter()).unwrap());
    }
    let path = dir.path().join("km.csv");
    write_km_curves(&path, &curves).unwrap();
    assert_eq!(read_km_curves(&path).unwrap(), curves);
}

#[test]
fn generated_tables_reload_to_the_same_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        samples_per_cluster: 10,
        output_dim: 12,
        latent_dim: 3,
        seed: 42,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap().dataset;
    write_expression_csv(dir.path().join("x.csv"), &ds).unwrap();
    write_survival_csv(dir.path().join("s.csv"), ds.survival.as_deref().unwrap()).unwrap();
    write_labels_csv(dir.path().join("l.csv"), &ds.sample_ids, ds.labels.as_deref().unwrap()).unwrap();
    let back = load_expression_csv(dir.path().join("x.csv"), false).unwrap();
    assert_eq!(back.sample_ids, ds.sample_ids);
    assert_eq!(back.values, ds.values);
    let surv: Vec<(String, f64, bool)> = load_survival_csv(dir.path().join("s.csv"))
        .unwrap()
        .into_iter()
        .map(|r: SurvivalRecord| (r.sample_id, r.time, r.event))
        .collect();
    let orig: Vec<(String, f64, bool)> =
        ds.survival.unwrap().into_iter().map(|r| (r.sample_id, r.time, r.event)).collect();
    assert_eq!(surv, orig);
}

#[test]
fn malformed_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let dup = write("dup.csv", "id,g1,g2\na,1,2\na,3,4\n");
    let e = load_expression_csv(&dup, false).unwrap_err();
    assert!(e.to_string().contains("`a`"), "{e}");
    assert!(load_expression_csv(write("ragged.csv", "id,g1,g2\na,1\n"), false).is_err());
    assert!(load_expression_csv(write("empty.csv", ""), false).is_err());
    let bad_cell = load_expression_csv(write("nan.csv", "id,g1,g2\na,1,x\n"), false).unwrap_err();
    assert!(bad_cell.to_string().contains("g2"), "{bad_cell}");
    assert!(load_survival_csv(write("ev.csv", "sample_id,time,event\na,1,2\n")).is_err());
    assert!(load_survival_csv(write("neg.csv", "sample_id,time,event\na,-1,1\n")).is_err());
}

fn small_experiment(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_text(&format!(
        "clusters = 3\nsamples_per_cluster = 30\nfeatures = 24\nplanted_dim = 4\n\
         latent_dim = 6\nencoder_hidden = 24\nnum_embeddings = 12\nnum_classes = 8\n\
         pretrain_epochs = 6\nfinetune_epochs = 6\npretrain_lr = 0.001\nfinetune_lr = 0.001\n{extra}"
    ))
    .unwrap()
}

#[test]
fn experiment_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_experiment(&small_experiment(""), &out).unwrap();
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(report["k"].as_u64().unwrap() >= 1);
    for key in ["nmi", "silhouette"] {
        assert!(report[key].as_f64().unwrap().is_finite(), "{key}");
    }
    for key in ["statistic", "p_value"] {
        assert!(report["logrank"][key].as_f64().unwrap().is_finite(), "{key}");
    }
    for f in ["config.txt", "assignments.csv", "pca.csv", "km_curves.csv", "flow.csv", "km.svg", "pca.svg", "checkpoint.bin"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let assignments = read_assignments(out.join("assignments.csv")).unwrap();
    assert_eq!(assignments.sample_ids.len(), 90);
    assert_eq!(assignments.probs.unwrap().cols(), 8);
    let svg = std::fs::read_to_string(out.join("km.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray"));
    // the written config reproduces the run's settings
    let again = ExperimentConfig::from_text(&std::fs::read_to_string(out.join("config.txt")).unwrap()).unwrap();
    assert_eq!(again, small_experiment(""));
}

#[test]
fn rerun_replaces_output_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_experiment(&small_experiment("plots = false"), &out).unwrap();
    assert!(!out.join("km.svg").exists());
    run_experiment(&small_experiment(""), &out).unwrap();
    assert!(out.join("km.svg").exists());
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["run".to_owned()]);
}

#[test]
fn failed_run_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    // latent wider than the input: model construction fails mid-run
    let mut cfg = small_experiment("");
    cfg.train.latent_dim = 30;
    let err = run_experiment(&cfg, &out).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn baseline_methods_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    for method in ["ae+kmeans", "vae+gmm", "vq+spectral", "ae+rim"] {
        let out = dir.path().join(method);
        let res = run_experiment(&small_experiment(&format!("method = {method}\nk = 3")), &out).unwrap();
        assert_eq!(res.report.method, method);
        assert!(out.join("assignments.csv").is_file());
    }
}

#[test]
fn ablation_table_has_twelve_cells() {
    let cfg = small_experiment("");
    let ds = vqrim::experiment::load_dataset(&cfg).unwrap();
    let table = ablate(&ds, &cfg.train, &cfg.k_candidates).unwrap();
    assert_eq!(table.cells.len(), 12);
    let mut methods: Vec<String> = table.cells.iter().map(|c| c.method()).collect();
    methods.sort();
    methods.dedup();
    assert_eq!(methods.len(), 12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ablation.csv");
    write_ablation_csv(&path, &[(0, table.clone()), (1, table)]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 25);
    assert_eq!(text.lines().next().unwrap(), "seed,method,k,nmi,silhouette,logrank_p");
}

#[test]
fn csv_expression_with_missing_survival_rows() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    std::fs::write(&x, "id,g1,g2,g3\na,1,2,3\nb,2,2,2\nc,0,5,1\n").unwrap();
    let s = dir.path().join("s.csv");
    std::fs::write(&s, "sample_id,time,event\na,1.5,1\nb,2,0\nzz,3,1\n").unwrap();
    let mut ds = load_expression_csv(&x, true).unwrap();
    assert_eq!(ds.values.shape(), (3, 3));
    for c in 0..3 {
        let col = ds.values.column(c);
        assert!(col.iter().sum::<f64>().abs() < 1e-12);
    }
    let dropped = ds.attach_survival(load_survival_csv(&s).unwrap());
    assert_eq!(dropped, vec!["zz".to_owned()]);
    assert_eq!(ds.sample_ids, vec!["a", "b"]);
    assert_eq!(ds.values.rows(), 2);
}
