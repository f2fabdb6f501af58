use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoder::EncoderConfig;
use crate::inference::ScoredOption;
use crate::pairing::OptionSpace;
use crate::text::Vocabulary;

/// Options `sK tK`; a premise mentions its gold signature token among noise.
fn toy(n_options: usize, n_inst: usize, seed: u64) -> (Vocabulary, OptionSpace, Vec<SelectionInstance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let options: Vec<String> = (0..n_options).map(|i| format!("s{i} t{i}")).collect();
    let data: Vec<SelectionInstance> = (0..n_inst)
        .map(|i| {
            let gold = rng.random_range(0..n_options);
            let mut words: Vec<String> = (0..4).map(|_| format!("n{}", rng.random_range(0..6))).collect();
            words.insert(rng.random_range(0..=words.len()), format!("s{gold}"));
            SelectionInstance::new(format!("i{i}"), words.join(" "), vec![gold])
        })
        .collect();
    let mut corpus: Vec<String> = options.clone();
    corpus.extend(data.iter().map(|d| d.premise.clone()));
    let vocab = Vocabulary::build(&corpus, 1).unwrap();
    (vocab, OptionSpace::new(options, "[LABEL]").unwrap(), data)
}

fn model(vocab: &Vocabulary, dropout: f64) -> EncoderModel {
    let config = EncoderConfig {
        layers: 1,
        heads: 2,
        model_dim: 32,
        ff_dim: 64,
        max_len: 48,
        dropout,
        use_positions: true,
        seed: 3,
    };
    EncoderModel::new(config, vocab.len()).unwrap()
}

#[test]
fn loss_closed_forms() {
    let ln2 = std::f64::consts::LN_2;
    assert!((ce_loss((0.5, 0.5), true) - ln2).abs() < 1e-12);
    assert!((ce_loss((0.5, 0.5), false) - ln2).abs() < 1e-12);
    assert_eq!(ce_loss((1.0, 0.0), true), 0.0);
    assert!(ce_loss((1.0, 0.0), false) > 27.0);
    assert!((bce_loss(&[0.5], &[true]).unwrap() - ln2).abs() < 1e-12);
    let v = bce_loss(&[0.9, 0.1], &[true, false]).unwrap();
    assert!((v + 0.9f64.ln()).abs() < 1e-12);
    assert!(bce_loss(&[0.5], &[true, false]).is_err());
    assert!(bce_loss(&[], &[]).is_err());
}

#[test]
fn bce_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let k = rng.random_range(1..=16);
        let s: Vec<f64> = (0..k).map(|_| rng.random_range(0.001..0.999)).collect();
        let y: Vec<bool> = (0..k).map(|_| rng.random()).collect();
        let mut oracle = 0.0;
        for i in 0..k {
            oracle -= if y[i] { s[i].ln() } else { (1.0 - s[i]).ln() };
        }
        oracle /= k as f64;
        let got = bce_loss(&s, &y).unwrap();
        assert!(got >= 0.0);
        assert!((got - oracle).abs() < 1e-12);
    }
}

#[test]
fn config_rules() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    let bad = TrainConfig {
        mode: Mode::Te,
        augment: true,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        k: 0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    assert_eq!("context".parse::<Mode>().unwrap(), Mode::Context);
    assert!("pairwise".parse::<Mode>().is_err());
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (vocab, space, data) = toy(6, 8, 1);
    let mut m = model(&vocab, 0.1);
    let init = m.params().to_vec();
    let builder = LayoutBuilder::new(&vocab, &space, 48);
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 2,
        batch_size: 4,
        k: 3,
        ..TrainConfig::default()
    };
    train(&mut m, &builder, &data, &config, None).unwrap();
    assert_eq!(m.params(), &init[..]);
}

#[test]
fn training_is_deterministic() {
    let (vocab, space, data) = toy(6, 12, 2);
    let builder = LayoutBuilder::new(&vocab, &space, 48);
    for mode in [Mode::Te, Mode::Context, Mode::Parallel] {
        let config = TrainConfig {
            mode,
            k: 3,
            epochs: 2,
            batch_size: 5,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut a = model(&vocab, 0.1);
        let mut b = model(&vocab, 0.1);
        let ra = train(&mut a, &builder, &data, &config, None).unwrap();
        let rb = train(&mut b, &builder, &data, &config, None).unwrap();
        assert_eq!(ra.losses, rb.losses);
        assert_eq!(a.params(), b.params());
    }
}

#[test]
fn context_without_competitors_equals_te() {
    let (vocab, space, data) = toy(6, 12, 3);
    let builder = LayoutBuilder::new(&vocab, &space, 48);
    let run = |mode| {
        let mut m = model(&vocab, 0.1);
        let config = TrainConfig {
            mode,
            k: 0,
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        train(&mut m, &builder, &data, &config, None).unwrap().losses
    };
    assert_eq!(run(Mode::Context), run(Mode::Te));
}

#[test]
fn parallel_layouts_hold_gold_and_k_options() {
    let (vocab, space, data) = toy(10, 20, 4);
    let builder = LayoutBuilder::new(&vocab, &space, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for fill in [FillPolicy::Random, FillPolicy::Ranked] {
        let config = TrainConfig {
            k: 4,
            fill,
            ..TrainConfig::default()
        };
        let layouts = epoch_layouts(&builder, &data, &config, None, &mut rng).unwrap();
        assert_eq!(layouts.len(), data.len());
        for (l, inst) in layouts.iter().zip(&data) {
            assert_eq!(l.option_indices.len(), 4);
            assert_eq!(l.labels.iter().filter(|&&b| b).count(), 1);
            assert!(l.option_indices.contains(&inst.gold[0]));
        }
    }
}

#[test]
fn augmented_groups_move_gold_through_every_position() {
    let (vocab, space, data) = toy(10, 20, 5);
    let builder = LayoutBuilder::new(&vocab, &space, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let config = TrainConfig {
        k: 4,
        augment: true,
        ..TrainConfig::default()
    };
    let layouts = epoch_layouts(&builder, &data, &config, None, &mut rng).unwrap();
    assert_eq!(layouts.len(), 4 * data.len());
    for group in layouts.chunks(4) {
        let mut positions: Vec<usize> = group
            .iter()
            .map(|l| l.labels.iter().position(|&b| b).unwrap())
            .collect();
        positions.sort_unstable();
        assert_eq!(positions, vec![0, 1, 2, 3]);
    }
}

#[test]
fn parallel_overfits_ten_instances() {
    let (vocab, space, data) = toy(8, 10, 6);
    // The set is memorizable: the gold signature token appears in each
    // premise and no other signature token does.
    for inst in &data {
        let found: Vec<usize> = (0..8)
            .filter(|o| inst.premise.split(' ').any(|w| w == format!("s{o}")))
            .collect();
        assert_eq!(found, inst.gold);
    }
    let mut m = model(&vocab, 0.0);
    let builder = LayoutBuilder::new(&vocab, &space, 48);
    let config = TrainConfig {
        mode: Mode::Parallel,
        k: 4,
        epochs: 500,
        batch_size: 10,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let report = train_with(&mut m, &builder, &data, &config, None, |_, _| Ok(EpochVerdict::default())).unwrap();
    let steps = report.losses.len();
    assert!(steps <= 500);
    let best = report.losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < 0.01, "best loss {best} after {steps} steps");
}

#[test]
fn monitor_can_stop_early() {
    let (vocab, space, data) = toy(6, 8, 7);
    let mut m = model(&vocab, 0.0);
    let builder = LayoutBuilder::new(&vocab, &space, 48);
    let config = TrainConfig {
        epochs: 5,
        k: 3,
        ..TrainConfig::default()
    };
    let report = train_with(&mut m, &builder, &data, &config, None, |epoch, _| {
        Ok(EpochVerdict {
            metric: Some(epoch as f64),
            stop: epoch == 1,
        })
    })
    .unwrap();
    assert_eq!(report.epochs_run(), 2);
    assert!(report.stopped_early);
    assert_eq!(report.dev_metrics, vec![Some(0.0), Some(1.0)]);
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(TrainReport::read_losses(&csv[..]).unwrap(), report.losses);
}

fn scored(pairs: &[(usize, f64)]) -> Vec<ScoredOption> {
    pairs.iter().map(|&(i, s)| ScoredOption::new(i, s)).collect()
}

#[test]
fn separated_scores_pick_largest_optimal_tau() {
    let s = vec![
        scored(&[(0, 0.95), (1, 0.05), (2, 0.9)]),
        scored(&[(0, 0.1), (1, 0.92), (2, 0.0)]),
    ];
    let g = vec![vec![0, 2], vec![1]];
    let scan = best_threshold(&s, &g).unwrap();
    assert_eq!(scan.f1, 1.0);
    assert_eq!(scan.tau, 0.89);
}

#[test]
fn identical_scores_degenerate_gracefully() {
    let s = vec![scored(&[(0, 0.5), (1, 0.5)]), scored(&[(0, 0.5), (1, 0.5)])];
    let g = vec![vec![0], vec![1]];
    let scan = best_threshold(&s, &g).unwrap();
    // Every τ < 0.5 predicts both options (F1 = 2/3); τ ≥ 0.5 predicts none.
    assert!((scan.f1 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(scan.tau, 0.49);
    assert!(best_threshold(&[], &[]).is_err());
}

#[test]
fn calibrated_tau_is_grid_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let s: Vec<Vec<ScoredOption>> = (0..15)
            .map(|_| (0..6).map(|i| ScoredOption::new(i, rng.random())).collect())
            .collect();
        let g: Vec<Vec<usize>> = (0..15).map(|_| vec![rng.random_range(0..3), 3 + rng.random_range(0..3)]).collect();
        let scan = best_threshold(&s, &g).unwrap();
        for &(_, f1) in &scan.curve {
            assert!(scan.f1 >= f1);
        }
    }
}

#[test]
fn select_k_rules() {
    assert_eq!(select_k(&[7], |_| Ok(0.3)).unwrap().0, 7);
    let (k, curve) = select_k(&[16, 2, 4, 8], |k| Ok(-((k as f64) - 8.0).powi(2))).unwrap();
    assert_eq!(k, 8);
    assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), vec![2, 4, 8, 16]);
    assert_eq!(select_k(&[4, 2], |_| Ok(1.0)).unwrap().0, 2);
    assert!(select_k(&[], |_| Ok(0.0)).is_err());
}

#[test]
fn smoothing_matches_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let xs: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..2.0)).collect();
    assert_eq!(gaussian_smooth(&xs, 1e-3), xs);
    assert_eq!(gaussian_smooth(&xs, 0.0), xs);
    for sigma in [0.7, 3.0, smoothing_sigma(xs.len())] {
        let got = gaussian_smooth(&xs, sigma);
        for i in 0..xs.len() {
            let (mut num, mut den) = (0.0, 0.0);
            for (j, x) in xs.iter().enumerate() {
                let d = i as f64 - j as f64;
                let w = (-d * d / (2.0 * sigma * sigma)).exp();
                num += w * x;
                den += w;
            }
            assert!((got[i] - num / den).abs() < 1e-9);
        }
    }
}
