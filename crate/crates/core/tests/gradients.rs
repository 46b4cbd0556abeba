mod common;

use common::{gradient_errors, small_model, uniform_matrix, JOINT};
use vqrim::model::{Objective, RimWeights};

#[test]
fn joint_objective_gradients_match_finite_differences() {
    for seed in 0..5 {
        let errs = gradient_errors(seed, JOINT);
        assert!(errs.iter().all(|&e| e < 1e-4), "seed {seed}: {errs:?}");
    }
}

#[test]
fn pretraining_objective_gradients_match_finite_differences() {
    let pre = Objective {
        commitment_cost: 0.25,
        rim: None,
    };
    for seed in 10..13 {
        let errs = gradient_errors(seed, pre);
        assert!(errs.iter().all(|&e| e < 1e-4), "seed {seed}: {errs:?}");
    }
}

#[test]
fn penalty_and_alpha_extremes() {
    for (alpha, lambda) in [(0.0, 0.0), (1.0, 0.0), (2.5, 1.0)] {
        let obj = Objective {
            commitment_cost: 1.0,
            rim: Some(RimWeights { alpha, lambda }),
        };
        let errs = gradient_errors(3, obj);
        assert!(errs.iter().all(|&e| e < 1e-4), "α={alpha} λ={lambda}: {errs:?}");
    }
}

#[test]
fn commitment_cost_moves_encoder_gradient_only() {
    let x = uniform_matrix(12, 10, &mut common::rng(7));
    let grads = |beta: f64| {
        let obj = Objective {
            commitment_cost: beta,
            ..JOINT
        };
        small_model(7).loss_and_gradients(&x, &obj, None).unwrap().1
    };
    let (lo, hi) = (grads(0.0), grads(2.0));
    assert_eq!(lo.codebook, hi.codebook);
    assert_eq!(lo.decoder.flatten(), hi.decoder.flatten());
    assert_ne!(lo.encoder.flatten(), hi.encoder.flatten());
}

#[test]
fn unused_codes_get_no_gradient() {
    let model = small_model(8);
    let x = uniform_matrix(3, 10, &mut common::rng(8));
    let q = model.codebook.lookup(&model.encode(&x).unwrap()).unwrap();
    let (_, g) = model.clone().loss_and_gradients(&x, &JOINT, None).unwrap();
    for k in 0..model.codebook.num_embeddings() {
        if !q.indices.contains(&k) {
            assert!(g.codebook.row(k).iter().all(|&v| v == 0.0));
        }
    }
}
