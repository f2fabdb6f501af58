use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::grad_check_params;

fn tiny(use_positions: bool) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        heads: 2,
        model_dim: 8,
        ff_dim: 12,
        max_len: 8,
        dropout: 0.0,
        use_positions,
        seed: 5,
    }
}

fn small(use_positions: bool) -> EncoderModel {
    let config = EncoderConfig {
        layers: 2,
        heads: 4,
        model_dim: 16,
        ff_dim: 32,
        max_len: 32,
        dropout: 0.1,
        use_positions,
        seed: 9,
    };
    EncoderModel::new(config, 30).unwrap()
}

#[test]
fn config_validation() {
    let mut c = EncoderConfig::default();
    assert!(c.validate().is_ok());
    c.heads = 3;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let c = EncoderConfig {
        dropout: 1.0,
        ..EncoderConfig::default()
    };
    assert!(c.validate().is_err());
}

#[test]
fn parameter_count_is_a_function_of_config() {
    let a = EncoderModel::new(EncoderConfig::default(), 100).unwrap();
    let b = EncoderModel::new(
        EncoderConfig {
            seed: 99,
            ..EncoderConfig::default()
        },
        100,
    )
    .unwrap();
    assert_eq!(a.num_parameters(), b.num_parameters());
    let (d, ff, l, v, len) = (64, 256, 2, 100, 256);
    let per_layer = 4 * (d * d + d) + 2 * 2 * d + (d * ff + ff) + (ff * d + d);
    let expected = v * d + len * d + l * per_layer + 2 * d + (2 * d + 2) + (d * d + d) + (d + 1);
    assert_eq!(a.num_parameters(), expected);
    assert!(a.all_finite());
}

#[test]
fn single_token_shape() {
    let m = small(true);
    let reps = m.encode_tokens(&[crate::text::CLS], false).unwrap();
    assert_eq!((reps.len(), reps.dim()), (1, 16));
}

#[test]
fn too_long_and_bad_ids_are_rejected() {
    let m = small(true);
    let ids = vec![4; 33];
    assert!(matches!(
        m.encode_tokens(&ids, false),
        Err(Error::TooLong { len: 33, max_len: 32 })
    ));
    assert!(m.encode_tokens(&[30], false).is_err());
    assert!(m.encode_tokens(&[], false).is_err());
}

#[test]
fn eval_mode_is_bitwise_deterministic() {
    let m = small(true);
    let ids = [2, 5, 6, 7, 3];
    let a = m.encode_tokens(&ids, false).unwrap();
    let b = m.encode_tokens(&ids, false).unwrap();
    assert_eq!(a.tensor().data(), b.tensor().data());
    let ta = m.encode_tokens(&ids, true).unwrap();
    let tb = m.encode_tokens(&ids, true).unwrap();
    assert_eq!(ta.tensor().data(), tb.tensor().data());
    assert_ne!(ta.tensor().data(), a.tensor().data());
}

#[test]
fn permutation_equivariance_without_positions() {
    let m = small(false);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let ids: Vec<usize> = (0..12).map(|_| rng.random_range(0..30)).collect();
        let mut perm: Vec<usize> = (0..ids.len()).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<usize> = perm.iter().map(|&p| ids[p]).collect();
        let base = m.encode_tokens(&ids, false).unwrap();
        let out = m.encode_tokens(&permuted, false).unwrap();
        for (row, &p) in perm.iter().enumerate() {
            for (a, b) in out.row(row).iter().zip(base.row(p)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn cls_vector_examples() {
    let reps = TokenReps::new(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
    assert_eq!(cls_vector(&reps).unwrap(), vec![1.0, 2.0]);
    let one = TokenReps::new(Tensor::from_rows(&[vec![7.0, 8.0]]).unwrap()).unwrap();
    assert_eq!(cls_vector(&one).unwrap(), vec![7.0, 8.0]);
}

#[test]
fn cls_vector_sees_context() {
    let m = small(true);
    let a = m.encode_tokens(&[2, 5, 6, 3], false).unwrap();
    let b = m.encode_tokens(&[2, 5, 9, 3], false).unwrap();
    let diff: f64 = cls_vector(&a)
        .unwrap()
        .iter()
        .zip(cls_vector(&b).unwrap())
        .map(|(x, y)| (x - y).abs())
        .sum();
    assert!(diff > 1e-6);
}

#[test]
fn span_mean_pool_examples() {
    let reps = TokenReps::new(Tensor::from_rows(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap()).unwrap();
    assert_eq!(span_mean_pool(&reps, (0, 1)).unwrap(), vec![1.0, 3.0]);
    assert_eq!(span_mean_pool(&reps, (0, 2)).unwrap(), vec![2.0, 2.0]);
    assert!(span_mean_pool(&reps, (1, 1)).is_err());
    assert!(span_mean_pool(&reps, (1, 3)).is_err());
}

#[test]
fn span_mean_pool_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<f64>> = (0..9)
        .map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let reps = TokenReps::new(Tensor::from_rows(&rows).unwrap()).unwrap();
    let pooled = span_mean_pool(&reps, (2, 7)).unwrap();
    for j in 0..5 {
        let oracle = (2..7).map(|i| rows[i][j]).sum::<f64>() / 5.0;
        assert!((pooled[j] - oracle).abs() < 1e-12);
    }
}

#[test]
fn zero_heads_give_half_probabilities() {
    let mut m = small(true);
    m.zero_cls_head();
    m.zero_scorer_head();
    let reps = m.encode_tokens(&[2, 5, 3, 6, 7, 3], false).unwrap();
    let (p, q) = m.classify_pair(&reps).unwrap();
    assert_eq!((p, q), (0.5, 0.5));
    let s = m.score_options(&reps, &[(3, 4), (4, 5)]).unwrap();
    assert_eq!(s, vec![0.5, 0.5]);
}

#[test]
fn classify_probabilities_sum_to_one() {
    let m = small(true);
    let reps = m.encode_tokens(&[2, 5, 3, 6, 3], false).unwrap();
    let (p, q) = m.classify_pair(&reps).unwrap();
    assert!((p + q - 1.0).abs() < 1e-9);
}

#[test]
fn score_options_single_span_and_errors() {
    let m = small(true);
    let reps = m.encode_tokens(&[2, 5, 3, 6, 7, 3], false).unwrap();
    let one = m.score_options(&reps, &[(3, 5)]).unwrap();
    assert_eq!(one.len(), 1);
    assert!(one[0] > 0.0 && one[0] < 1.0);
    let both = m.score_options(&reps, &[(1, 2), (3, 5)]).unwrap();
    assert!((both[1] - one[0]).abs() < 1e-12);
    assert!(m.score_options(&reps, &[(1, 3), (2, 4)]).is_err());
    assert!(m.score_options(&reps, &[(2, 2)]).is_err());
    assert!(m.score_options(&reps, &[]).is_err());
}

#[test]
fn identical_options_score_equally_without_positions() {
    let m = small(false);
    // [CLS] p p [SEP] h h [SEP] h h [SEP] h h [SEP]
    let ids = [2, 10, 11, 3, 12, 13, 3, 12, 13, 3, 12, 13, 3];
    let s = m.parallel_scores(&ids, &[(4, 6), (7, 9), (10, 12)]).unwrap();
    assert!((s[0] - s[1]).abs() < 1e-9 && (s[1] - s[2]).abs() < 1e-9);
}

#[test]
fn bi_encode_is_unit_norm_and_cosine_matches_dot() {
    let m = small(true);
    let a = m.bi_encode(&[5, 6, 7]).unwrap();
    let b = m.bi_encode(&[8, 9]).unwrap();
    let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-9);
    assert!((cosine(&a, &m.bi_encode(&[5, 6, 7]).unwrap()) - 1.0).abs() < 1e-12);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    assert!((cosine(&a, &b) - dot).abs() < 1e-12);
    assert!(m.bi_encode(&[]).is_err());
}

fn full_loss(m: &EncoderModel, g: &mut Graph<'_>) -> Result<Var> {
    // [CLS] p p [SEP] h [SEP] h h
    let ids = [2, 4, 5, 3, 6, 3, 7, 8];
    let reps = m.forward::<ChaCha8Rng>(g, &ids, None)?;
    let probs = m.classify_in(g, reps)?;
    let ce = g.cross_entropy(probs, &[0])?;
    let scores = m.score_in(g, reps, &[(4, 5), (6, 8)])?;
    let bce = g.bce(scores, &[true, false])?;
    g.add(ce, bce)
}

#[test]
fn encoder_and_heads_pass_grad_check() {
    for use_positions in [true, false] {
        let m = EncoderModel::new(tiny(use_positions), 10).unwrap();
        let report = grad_check_params(m.params(), |g| full_loss(&m, g), 1e-4, 1e-5).unwrap();
        assert!(report.passed, "{report:?} at {}", m.param_names()[report.worst.0]);
        assert_eq!(report.checked, m.num_parameters());
    }
}

#[test]
fn bi_encoder_passes_grad_check() {
    let m = EncoderModel::new(tiny(true), 10).unwrap();
    let report = grad_check_params(
        m.params(),
        |g| {
            let a = m.bi_encode_in::<ChaCha8Rng>(g, &[4, 5, 6], None)?;
            let b = m.bi_encode_in::<ChaCha8Rng>(g, &[7, 8], None)?;
            let c = m.bi_encode_in::<ChaCha8Rng>(g, &[9, 4], None)?;
            let q = g.concat_rows(&[a, a])?;
            let o = g.concat_rows(&[b, c])?;
            let ot = g.transpose(o)?;
            let logits = g.matmul(q, ot)?;
            let logits = g.scale(logits, 5.0)?;
            let p = g.softmax(logits, 1)?;
            g.cross_entropy(p, &[0, 1])
        },
        1e-4,
        1e-5,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn checkpoint_round_trip() {
    let m = small(true);
    let mut buf = Vec::new();
    m.write_checkpoint(&mut buf).unwrap();
    assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
    let back = EncoderModel::read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.params(), m.params());

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(EncoderModel::read_checkpoint(&bad[..]), Err(Error::Format(_))));
    assert!(EncoderModel::read_checkpoint(&buf[..buf.len() - 3]).is_err());
}
