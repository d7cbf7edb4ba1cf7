//! End-to-end training behaviour on small synthetic problems.

mod common;

use common::*;
use rand::Rng;
use robord::data::split;
use robord::harness::{grid_search, Column, Correction, DataSource};
use robord::noise_estimation::{estimate_matrix, matrix_error, train_multiclass, EstimationConfig};
use robord::ordinal_model::expected_sgd_gaps;
use robord::{
    evaluate, generate_synth, run_experiment, train, Activation, BaseLoss, ExperimentPlan, LossSpec, SynthSpec,
    TrainConfig, Variant,
};

fn small_config(loss: LossSpec, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        activation: Activation::Linear,
        ..TrainConfig::new(loss)
    }
}

fn small_plan(n: usize, epochs: usize, trials: usize, rho: f64) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(
        "small",
        DataSource::Synth(SynthSpec::with_shape(n, 2, 5, 7)),
        uniform_noise(5, rho),
    );
    plan.trials = trials;
    plan.train.epochs = epochs;
    plan.estimation.epochs = epochs;
    plan
}

#[test]
fn separable_data_is_learned() {
    let data = generate_synth(&SynthSpec::with_shape(1000, 2, 5, 3)).unwrap();
    let (tr, te) = split(&data, 0.8, 11).unwrap();
    for base in [BaseLoss::Ce, BaseLoss::Imc] {
        let cfg = small_config(LossSpec::plain(base), 80, 5);
        let out = train(cfg.init_model(2, 5).unwrap(), &tr, &cfg).unwrap();
        let m = evaluate(&out.model, &te).unwrap();
        assert!(m.mae < 0.06, "{base:?}: test MAE {}", m.mae);
        assert!(out.rank_log.final_ordered);
        let curve = &out.loss_curve;
        assert!(curve.last().unwrap() < &(0.5 * curve[0]), "{base:?}: loss {curve:?}");
    }
}

#[test]
fn identity_correction_reproduces_plain_training() {
    let data = generate_synth(&SynthSpec::with_shape(300, 2, 4, 1)).unwrap();
    let id = uniform_noise(4, 0.0);
    for base in [BaseLoss::Ce, BaseLoss::Imc] {
        let plain = small_config(LossSpec::plain(base), 15, 9);
        let corr = small_config(LossSpec::corrected(base, id.inverse().unwrap().clone()).unwrap(), 15, 9);
        let a = train(plain.init_model(2, 4).unwrap(), &data, &plain).unwrap();
        let b = train(corr.init_model(2, 4).unwrap(), &data, &corr).unwrap();
        assert_eq!(a.model.to_checkpoint(), b.model.to_checkpoint());
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.rank_log, b.rank_log);
    }
}

#[test]
fn corrected_ce_beats_plain_ce_under_noise() {
    let mut plan = small_plan(1500, 120, 5, 0.15);
    plan.variants = vec![
        Variant::new(BaseLoss::Ce, Correction::None),
        Variant::new(BaseLoss::Ce, Correction::Known),
    ];
    plan.clean_condition = false;
    let report = run_experiment(&plan).unwrap();
    assert_eq!(report.completed.len(), 5);
    let mut wins = 0;
    for t in &report.completed {
        let plain = t.results.iter().find(|r| r.variant == "ce").unwrap().noisy.mae;
        let kr = t.results.iter().find(|r| r.variant == "ce-kr").unwrap().noisy.mae;
        if kr < plain {
            wins += 1;
        }
    }
    let ce = report.row("ce", Column::Noisy).unwrap().mae_mean;
    let kr = report.row("ce-kr", Column::Noisy).unwrap().mae_mean;
    assert!(kr < ce, "ce {ce} vs ce-kr {kr}");
    assert!(wins >= 4, "corrected loss won only {wins} of 5 trials");
}

#[test]
fn one_trial_has_zero_spread() {
    let mut plan = small_plan(300, 10, 1, 0.1);
    plan.variants = vec![Variant::new(BaseLoss::Imc, Correction::Known)];
    let report = run_experiment(&plan).unwrap();
    assert!(!report.summary.is_empty());
    for row in &report.summary {
        assert_eq!(row.trials, 1);
        assert_eq!(row.mae_std, 0.0);
        assert_eq!(row.zero_one_std, 0.0);
    }
}

#[test]
fn expected_step_matches_clean_step_and_keeps_order() {
    // By unbiasedness the expected corrected step equals the clean step, so
    // the expected gaps can be checked against the plain-gradient oracle.
    let mut r = rng(42);
    for _ in 0..2000 {
        let k = r.random_range(3..=7);
        let b = ordered_thresholds(&mut r, k, 0.0);
        let g = r.random_range(-4.0..4.0);
        let y = r.random_range(1..=k);
        let m = uniform_noise(k, r.random_range(0.0..0.12));
        for (base, lr) in [(BaseLoss::Ce, 0.01), (BaseLoss::Ce, 1.0), (BaseLoss::Ce, 4.0), (BaseLoss::Imc, 0.05)] {
            let gaps = expected_sgd_gaps(base, g, &b, y, &m, lr).unwrap();
            let clean = match base {
                BaseLoss::Ce => oracle_ce(g, b.as_slice(), y).2,
                _ => oracle_imc(g, b.as_slice(), y).2,
            };
            let next: Vec<f64> = b.as_slice().iter().zip(&clean).map(|(bi, d)| bi - lr * d).collect();
            for (i, e) in gaps.iter().enumerate() {
                let want = next[i] - next[i + 1];
                assert!((e - want).abs() < 1e-9, "k={k} i={i}: {e} vs {want}");
                let gap = b.as_slice()[i] - b.as_slice()[i + 1];
                // CE keeps order for lr <= 4; IMC only once gaps reach lr
                if base == BaseLoss::Ce || gap >= lr {
                    assert!(*e >= -1e-12, "{base:?} lr={lr} gap {gap} -> {e}");
                }
            }
        }
    }
}

#[test]
fn grid_search_single_cell_and_divergent_cells() {
    let mut plan = small_plan(400, 8, 1, 0.1);
    plan.train.hidden_sizes = vec![4];
    let single = grid_search(&plan, BaseLoss::Ce, &[0.02], &[4]).unwrap();
    assert_eq!((single.learning_rate, single.hidden), (0.02, 4));
    assert_eq!(single.cells.len(), 1);

    let mixed = grid_search(&plan, BaseLoss::Ce, &[0.02, 1e300], &[4]).unwrap();
    assert_eq!(mixed.learning_rate, 0.02);
    let bad = mixed.cells.iter().find(|c| c.learning_rate == 1e300).unwrap();
    assert!(bad.score.is_none());
    assert!(bad.diagnostic.is_some());

    assert!(grid_search(&plan, BaseLoss::Ce, &[1e300], &[4]).is_err());
}

#[test]
fn estimated_matrix_is_close_to_truth() {
    let truth = uniform_noise(5, 0.15);
    let data = generate_synth(&SynthSpec::with_shape(2500, 2, 5, 0)).unwrap();
    let (tr, _) = split(&data, 0.8, 1).unwrap();
    let noisy = tr.with_labels(truth.corrupt_labels(tr.labels(), 2).unwrap()).unwrap();
    let cfg = EstimationConfig { seed: 3, ..EstimationConfig::default() };
    let head = train_multiclass(&noisy, &cfg).unwrap();
    let est = estimate_matrix(&head, &noisy, &cfg).unwrap();
    for s in est.entries().row_sums() {
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert!(est.entries().as_slice().iter().all(|v| *v >= 0.0));
    for i in 1..=5 {
        // the diagonal dominates every row as in the truth
        assert!((1..=5).filter(|&j| j != i).all(|j| est.entry(i, i) > est.entry(i, j)));
    }
    let (max_abs, frob) = matrix_error(&est, &truth).unwrap();
    assert!(max_abs < 0.2, "max abs error {max_abs}");
    assert!(frob < 0.4, "frobenius error {frob}");
}
