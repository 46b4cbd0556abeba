use std::path::Path;
use std::process::{Command, Output};

fn vqrim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqrim"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("binary runs")
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const SMALL: &[&str] = &["--epochs", "2", "--latent-dim", "4", "--encoder-hidden", "16", "--discriminator-hidden", "8", "--set", "num_embeddings=8"];

fn synth(dir: &Path) {
    ok(vqrim(dir, &["--seed", "5", "synth", "--samples-per-cluster", "15", "--features", "20", "--planted-dim", "3"]));
}

#[test]
fn synth_writes_three_tables() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let expr = std::fs::read_to_string(tmp.path().join("expression.csv")).unwrap();
    assert_eq!(expr.lines().count(), 46);
    let surv = std::fs::read_to_string(tmp.path().join("survival.csv")).unwrap();
    assert!(surv.starts_with("sample_id,time,event"));
    let labels = std::fs::read_to_string(tmp.path().join("labels.csv")).unwrap();
    assert!(labels.starts_with("sample_id,label"));
}

#[test]
fn fit_then_evaluate_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let fit = tmp.path().join("fit");
    let mut args = vec!["fit", "--data"];
    let expr = data.join("expression.csv");
    let labels = data.join("labels.csv");
    let surv = data.join("survival.csv");
    let (expr, labels, surv) = (expr.to_str().unwrap(), labels.to_str().unwrap(), surv.to_str().unwrap());
    args.extend([expr, "--labels", labels, "--survival", surv]);
    args.extend(SMALL);
    let line = ok(vqrim(&fit, &args));
    assert!(line.starts_with("vq-rim: K="), "{line}");
    for f in ["assignments.csv", "metrics.json", "checkpoint.bin", "config.txt", "km.svg", "pca.svg", "km_curves.csv"] {
        assert!(fit.join(f).is_file(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fit.join("metrics.json")).unwrap()).unwrap();
    assert!(report["nmi"].as_f64().is_some());

    let assignments = fit.join("assignments.csv");
    let a = assignments.to_str().unwrap();
    let ev = tmp.path().join("ev");
    let out = ok(vqrim(&ev, &["evaluate", "--assignments", a, "--data", expr, "--labels", labels, "--survival", surv]));
    assert!(out.contains("NMI="));
    // same labels, same score
    let again: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(again["nmi"], report["nmi"]);

    let km = tmp.path().join("km");
    ok(vqrim(&km, &["km-plot", "--assignments", a, "--survival", surv]));
    assert!(std::fs::read_to_string(km.join("km.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn baseline_fit_on_generated_data() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["--seed", "2", "fit", "--method", "ae+kmeans", "--samples-per-cluster", "12", "--features", "16", "--planted-dim", "3"];
    args.extend(SMALL);
    let line = ok(vqrim(tmp.path(), &args));
    assert!(line.starts_with("ae+kmeans: K="), "{line}");
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "samples_per_cluster = 10\nfeatures = 12\nplanted_dim = 3\nlatent_dim = 4\nencoder_hidden = 8\nepochs = 50\n").unwrap();
    let out = tmp.path().join("out");
    ok(vqrim(&out, &["fit", "--config", cfg.to_str().unwrap(), "--epochs", "1", "--discriminator-hidden", "8"]));
    let written = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.contains("pretrain_epochs = 1"), "{written}");
}

#[test]
fn bad_input_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let o = vqrim(tmp.path(), &["fit", "--set", "bogus=1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `bogus`"));

    let o = vqrim(tmp.path(), &["fit", "--set", "novalue"]);
    assert!(!o.status.success());

    let o = vqrim(tmp.path(), &["evaluate", "--assignments", "missing.csv", "--data", "missing.csv"]);
    assert!(!o.status.success());
}

#[test]
fn ablate_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--seeds", "2", "--samples-per-cluster", "10", "--features", "12", "--planted-dim", "3"];
    args.extend(SMALL);
    let out = ok(vqrim(tmp.path(), &args));
    assert!(out.contains("of 2 seeds"), "{out}");
    let csv = std::fs::read_to_string(tmp.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("seed,method,k,nmi,silhouette,logrank_p"));
    assert_eq!(csv.lines().count(), 1 + 2 * 12);
}
