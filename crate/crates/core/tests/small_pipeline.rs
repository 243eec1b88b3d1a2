use datesort_core::adaptor::LiveSettings;
use datesort_core::neuralmodel::{ConvBlock, ModelConfig};
use datesort_core::pipeline::{stratified_split, train_pipeline, PreprocessConfig};
use datesort_core::synthcrop::{generate_dataset, sensor_reference, DatasetSpec, SimConfig, VARIETY_COUNT};

fn small_config() -> ModelConfig {
    ModelConfig {
        input_height: 32,
        input_width: 32,
        conv_blocks: vec![ConvBlock { filters: 4, kernel: 3 }],
        dense_widths: vec![32],
        epochs: 5,
        seed: 3,
        ..ModelConfig::default()
    }
}

#[test]
fn toy_set_trains_deterministically_and_beats_chance() {
    let sim = SimConfig {
        image_size: 32,
        ..SimConfig::default()
    };
    let data = generate_dataset(&DatasetSpec::uniform(15, 9), &sim).unwrap();
    let (tr, ev) = stratified_split(&data, 0.25, 1).unwrap();
    assert_eq!(tr.len() + ev.len(), data.len());
    let train: Vec<_> = tr.iter().map(|&i| data[i].clone()).collect();
    let eval: Vec<_> = ev.iter().map(|&i| data[i].clone()).collect();

    let reference = sensor_reference();
    let pre = PreprocessConfig::default();
    let (a, report_a) = train_pipeline(&train, &reference, &pre, &small_config()).unwrap();
    let (b, report_b) = train_pipeline(&train, &reference, &pre, &small_config()).unwrap();
    assert_eq!(report_a.epochs.len(), 5);
    assert_eq!(report_a, report_b);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

    let evaluation = a.evaluate(&eval).unwrap();
    let m = &evaluation.metrics;
    assert_eq!(m.samples, eval.len());
    assert_eq!(m.variety.curves.len(), VARIETY_COUNT);
    assert!(m.variety.metrics.accuracy > 1.0 / VARIETY_COUNT as f64);
    assert!(evaluation.chemistry.moisture_rmse.is_finite());

    let (prepared, out) = a.run(&eval[0], &LiveSettings::default()).unwrap();
    assert_eq!(prepared.image.len(), 3 * 32 * 32);
    assert!((out.variety_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
