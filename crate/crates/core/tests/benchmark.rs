//! Properties that need the default 935-sample benchmark and a model trained
//! on its training split. The model is trained once and shared.

use std::sync::OnceLock;

use datesort_core::adaptor::{ab_compare, run_adaptation, AdaptAction, AdaptConfig, Policy};
use datesort_core::evolver::{CvFitness, Fitness, Genome};
use datesort_core::features::SLOT_NAMES;
use datesort_core::neuralmodel::{ModelConfig, TrainReport, TrainingSample};
use datesort_core::pipeline::{
    prepare_all, stratified_split, to_training_sample, train_pipeline, Pipeline, PreprocessConfig,
};
use datesort_core::synthcrop::{
    generate_dataset, sensor_reference, DatasetSpec, DriftConfig, FruitSample, SimConfig,
};

struct Bench {
    train: Vec<FruitSample>,
    eval: Vec<FruitSample>,
    pipeline: Pipeline,
    report: TrainReport,
}

fn bench() -> &'static Bench {
    static BENCH: OnceLock<Bench> = OnceLock::new();
    BENCH.get_or_init(|| {
        let data = generate_dataset(&DatasetSpec::paper_shaped(42), &SimConfig::default()).unwrap();
        let (tr, ev) = stratified_split(&data, 0.2, 42).unwrap();
        let train: Vec<_> = tr.iter().map(|&i| data[i].clone()).collect();
        let eval: Vec<_> = ev.iter().map(|&i| data[i].clone()).collect();
        let config = ModelConfig {
            seed: 42,
            ..ModelConfig::default()
        };
        let (pipeline, report) =
            train_pipeline(&train, &sensor_reference(), &PreprocessConfig::default(), &config).unwrap();
        Bench {
            train,
            eval,
            pipeline,
            report,
        }
    })
}

#[test]
fn loss_at_epoch_ten_is_below_epoch_one() {
    let losses = &bench().report.epochs;
    assert!(losses.len() >= 10);
    assert!(losses[9].total < losses[0].total, "{} vs {}", losses[9].total, losses[0].total);
}

#[test]
fn held_out_accuracy_and_auc() {
    let ev = bench().pipeline.evaluate(&bench().eval).unwrap();
    assert!(ev.metrics.variety.metrics.accuracy >= 0.90);
    assert!(ev.metrics.spoilage.roc.as_ref().unwrap().auc >= 0.95);
}

#[test]
fn bundle_round_trip_preserves_predictions() {
    let b = bench();
    let back = Pipeline::from_json(&b.pipeline.to_json().unwrap()).unwrap();
    let live = Default::default();
    for s in b.eval.iter().take(10) {
        assert_eq!(b.pipeline.run(s, &live).unwrap().1, back.run(s, &live).unwrap().1);
    }
}

#[test]
fn spectral_only_mask_beats_chance() {
    let b = bench();
    let input = (32, 32);
    let prepared = prepare_all(&b.train, &sensor_reference(), &PreprocessConfig::default(), input).unwrap();
    let data: Vec<TrainingSample> = b
        .train
        .iter()
        .zip(prepared)
        .map(|(s, p)| to_training_sample(s, p))
        .collect();
    let base = ModelConfig {
        input_height: input.0,
        input_width: input.1,
        epochs: 3,
        seed: 5,
        ..ModelConfig::default()
    };
    let genome = Genome {
        lr_log10: -2.0,
        batch_size: 32,
        conv_blocks: 1,
        filters_base: 4,
        dense_width: 32,
        feature_mask: SLOT_NAMES.iter().map(|n| n.starts_with("spec_")).collect(),
    };
    assert_eq!(genome.feature_mask.iter().filter(|&&b| b).count(), 18);
    let fitness = CvFitness::new(&data, base, 3);
    let score = fitness.evaluate(&genome).unwrap();
    assert!(score > 0.125, "fitness {score}");
}

#[test]
fn converged_policy_holds_still_without_drift() {
    let b = bench();
    let run = run_adaptation(
        &b.pipeline,
        &b.eval,
        &DriftConfig::disabled(),
        &AdaptConfig::default(),
        Policy::Adaptive,
        42,
    )
    .unwrap();
    let mut counts = [0usize; 7];
    for r in &run.log[run.log.len() - 200..] {
        counts[r.action] += 1;
    }
    let modal = (0..7).max_by_key(|&a| (counts[a], std::cmp::Reverse(a))).unwrap();
    let action = AdaptAction::from_code(modal).unwrap();
    assert!(action.is_zero_magnitude(), "modal action {action:?}, counts {counts:?}");
}

#[test]
fn adaptive_is_not_worse_under_drift() {
    let b = bench();
    let config = AdaptConfig::default();
    let (summary, adaptive, frozen) =
        ab_compare(&b.pipeline, &b.eval, &DriftConfig::default(), &config, 42, 1000).unwrap();
    assert!(summary.gap_points >= 0.0, "{summary:?}");
    let n = config.steps;
    for (a, f) in adaptive.log[n - 500..].iter().zip(&frozen.log[n - 500..]) {
        assert!(a.running_accuracy >= f.running_accuracy, "step {}: {a:?} vs {f:?}", a.step);
    }
}
