use ace_core::tasks::{gen_grids, gen_sequences, GridTaskParams, Layout, Sample, SequenceSample, SequenceTaskParams};
use ace_core::train::{evaluate, mean_loss, modal_counts, predicted_counts, rmse_metrics, train, LossKind, ToyModel, TrainConfig};
use ace_core::{softmax, Alphabet};

fn clean_digits(seed: u64, count: usize) -> Vec<SequenceSample> {
    let params = SequenceTaskParams { seed, count, timesteps: 20, max_len: 8, noise_sigma: 0.0 };
    gen_sequences(&params, &Alphabet::digits()).unwrap()
}

#[test]
fn ace_and_ctc_reach_parity_on_clean_digits() {
    let alphabet = Alphabet::digits();
    let (train_set, test_set) = (clean_digits(21, 2000), clean_digits(22, 500));
    let model = ToyModel::new(11, 11, None, 0.1, 21).unwrap();
    let mut reports = Vec::new();
    for loss in [LossKind::AceCe, LossKind::Ctc] {
        let config = TrainConfig { epochs: 30, seed: 21, ..TrainConfig::new(loss) };
        let run = train(&config, &train_set, Some(&test_set), &alphabet, model.clone()).unwrap();
        assert_eq!(run.log.len(), 30);
        reports.push(evaluate(&run.model, &test_set, &alphabet).unwrap());
    }
    assert!(reports[0].count_acc >= 0.99, "ACE count accuracy {}", reports[0].count_acc);
    assert!((reports[0].cer - reports[1].cer).abs() <= 0.05, "{reports:?}");
}

#[test]
fn regression_lags_cross_entropy_with_a_large_vocabulary() {
    let alphabet = Alphabet::large(1000).unwrap();
    let params = SequenceTaskParams { seed: 4, count: 60, timesteps: 10, max_len: 5, noise_sigma: 0.0 };
    let data = gen_sequences(&params, &alphabet).unwrap();
    let mut common = Vec::new();
    for loss in [LossKind::AceCe, LossKind::AceRegression] {
        let config = TrainConfig { epochs: 5, seed: 4, ..TrainConfig::new(loss) };
        let run = train(&config, &data, None, &alphabet, ToyModel::zeros(1001, 1001)).unwrap();
        common.push(mean_loss(&run.model, &data, &alphabet, LossKind::AceCe).unwrap());
    }
    // Both models scored on the ACE-CE scale; the regression one barely moved.
    let uniform = mean_loss(&ToyModel::zeros(1001, 1001), &data, &alphabet, LossKind::AceCe).unwrap();
    assert!(common[1] > common[0], "{common:?}");
    assert!(common[0] < 0.6 * uniform && common[1] > 0.9 * uniform, "{common:?} vs {uniform}");
}

#[test]
fn ace_counting_beats_the_modal_baseline() {
    let alphabet = Alphabet::digits();
    let params = |seed, count| GridTaskParams {
        seed,
        count,
        height: 4,
        width: 8,
        max_objects: 8,
        layout: Layout::Random,
        noise_sigma: 0.3,
    };
    let train_set = gen_grids(&params(31, 600), &alphabet).unwrap();
    let test_set = gen_grids(&params(32, 200), &alphabet).unwrap();
    let config = TrainConfig { learning_rate: 1.0, epochs: 40, seed: 5, ..TrainConfig::new(LossKind::AceCe) };
    let run = train(&config, &train_set, None, &alphabet, ToyModel::new(11, 11, None, 0.1, 5).unwrap()).unwrap();
    let counts = |s: &ace_core::tasks::GridSample| s.counts(&alphabet).unwrap().counts()[1..].to_vec();
    let truth: Vec<Vec<usize>> = test_set.iter().map(counts).collect();
    let predicted: Vec<Vec<usize>> = test_set
        .iter()
        .map(|s| predicted_counts(&softmax(&run.model.forward(s.features(), s.grid_shape()).unwrap())))
        .collect();
    let modal = modal_counts(&train_set.iter().map(counts).collect::<Vec<_>>());
    let ours = rmse_metrics(&predicted, &truth).unwrap();
    let baseline = rmse_metrics(&vec![modal; truth.len()], &truth).unwrap();
    assert!(ours.m_rmse < baseline.m_rmse, "{ours:?} vs {baseline:?}");
}
