//! One line per acceptance criterion. Run with `--nocapture` to see them.

mod common;

use common::Check;

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("gradient correctness", common::check_gradients),
        ("quantizer and code posterior fidelity", common::check_quantization),
        ("entropy and mutual-information oracle", common::check_entropies),
        ("automatic K recovery", common::check_auto_k),
        ("ablation ordering", common::check_ablation),
        ("Kaplan-Meier oracle", common::check_kaplan_meier),
        ("log-rank calibration", common::check_logrank_calibration),
        ("metric oracles", common::check_metric_oracles),
        ("determinism", common::check_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let c = check();
        println!("{} {name}: {}", if c.passed { "PASS" } else { "FAIL" }, c.detail);
        if !c.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
