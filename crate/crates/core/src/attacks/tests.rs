use proptest::prelude::*;

use super::*;
use crate::augment::{sample_view, AugmentConfig};
use crate::corpus::SubjectId;
use crate::encoders::{encode_checkpoint, make_fixed_masks, mae_loss, Encoder, EncoderConfig, EncoderModel, Family, MaskPattern};
use crate::nn::{cosine_sim, finite_diff_check, Tensor};
use crate::rng::SeededRng;

fn window(rng: &mut SeededRng) -> Vec<f64> {
    (0..2000).map(|_| rng.normal()).collect()
}

fn sid(key: &str) -> SubjectId {
    SubjectId::new("d", key).unwrap()
}

/// Returns its input as the reconstruction and a constant embedding.
struct Rigged(Family);

impl Encoder for Rigged {
    fn family(&self) -> Family {
        self.0
    }

    fn embedding_dim(&self) -> usize {
        3
    }

    fn encode(&self, _x: &[f64]) -> crate::Result<Vec<f64>> {
        Ok(vec![1.0, -2.0, 0.5])
    }

    fn reconstruct(&self, x: &[f64], _mask: &MaskPattern) -> crate::Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

#[test]
fn perfect_reconstructor_scores_zero() {
    let mut rng = SeededRng::new(1, 0);
    let masks = make_fixed_masks(8, 40, 50, 0.5, 42);
    assert_eq!(score_rec(&Rigged(Family::MaeCnn), &window(&mut rng), &masks).unwrap(), 0.0);
}

#[test]
fn reconstruction_score_is_mean_of_mask_losses() {
    let mut rng = SeededRng::new(2, 0);
    let x = window(&mut rng);
    for f in [Family::MaeCnn, Family::MaeTransformer] {
        let m = EncoderModel::init(&EncoderConfig::desk(f)).unwrap();
        let masks = make_fixed_masks(4, 40, 50, 0.5, 42);
        let mut losses = Vec::new();
        for mask in &masks {
            losses.push(mae_loss(&x, &m.reconstruct(&x, mask).unwrap(), mask).unwrap().0);
        }
        let expected = -losses.iter().sum::<f64>() / 4.0;
        assert!((score_rec(&m, &x, &masks).unwrap() - expected).abs() < 1e-12);
        assert_eq!(score_rec(&m, &x, &masks[..1]).unwrap(), -losses[0]);
    }
    let c = EncoderModel::init(&EncoderConfig::desk(Family::SimclrCnn)).unwrap();
    assert!(score_rec(&c, &x, &make_fixed_masks(1, 40, 50, 0.5, 1)).is_err());
}

#[test]
fn constant_encoder_is_perfectly_consistent() {
    let mut rng = SeededRng::new(3, 0);
    let x = window(&mut rng);
    let s = score_con(&Rigged(Family::SimclrCnn), &x, 4, &AugmentConfig::default(), &mut rng).unwrap();
    assert!((s - 1.0).abs() < 1e-15);
}

#[test]
fn identity_augmentation_is_perfectly_consistent() {
    let mut rng = SeededRng::new(4, 0);
    let x = window(&mut rng);
    for f in [Family::SimclrCnn, Family::Ts2vec] {
        let m = EncoderModel::init(&EncoderConfig::desk(f)).unwrap();
        let s = score_con(&m, &x, 3, &AugmentConfig::identity(), &mut rng).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{f}: {s}");
    }
}

#[test]
fn consistency_score_is_mean_of_draw_cosines() {
    let mut rng = SeededRng::new(5, 0);
    let x = window(&mut rng);
    let m = EncoderModel::init(&EncoderConfig::desk(Family::SimclrCnn)).unwrap();
    let aug = AugmentConfig::default();
    let got = score_con(&m, &x, 5, &aug, &mut SeededRng::new(9, 9)).unwrap();
    let mut oracle = SeededRng::new(9, 9);
    let mut cosines = Vec::new();
    for _ in 0..5 {
        let a = m.encode(&sample_view(&x, &aug, &mut oracle)).unwrap();
        let b = m.encode(&sample_view(&x, &aug, &mut oracle)).unwrap();
        cosines.push(cosine_sim(&a, &b).unwrap());
    }
    assert!((got - cosines.iter().sum::<f64>() / 5.0).abs() < 1e-12);
    assert!((-1.0..=1.0).contains(&got));
    let mae = EncoderModel::init(&EncoderConfig::desk(Family::MaeCnn)).unwrap();
    assert!(score_con(&mae, &x, 1, &aug, &mut oracle).is_err());
}

#[test]
fn scoring_leaves_parameters_untouched() {
    let mut rng = SeededRng::new(6, 0);
    let x = window(&mut rng);
    let m = EncoderModel::init(&EncoderConfig::desk(Family::MaeTransformer)).unwrap();
    let before = encode_checkpoint(&m).unwrap();
    score_rec(&m, &x, &make_fixed_masks(8, 40, 50, 0.5, 42)).unwrap();
    subject_embedding(&m, &[&x], 4, &mut rng).unwrap();
    assert_eq!(encode_checkpoint(&m).unwrap(), before);
}

#[test]
fn feature_examples() {
    let zero = subject_features(&[0.0; 4]).unwrap();
    assert_eq!(zero.to_array(), [0.0; 4]);
    let ramp: Vec<f64> = (1..=10).map(f64::from).collect();
    let f = subject_features(&ramp).unwrap();
    assert_eq!(f.mean, 5.5);
    assert!((f.std - 8.25f64.sqrt()).abs() < 1e-12);
    assert_eq!((f.max, f.q90), (10.0, 9.0));
    assert_eq!(subject_features(&[-3.5]).unwrap().to_array(), [-3.5, 0.0, -3.5, -3.5]);
    assert!(subject_features(&[]).is_err());
}

#[test]
fn nearest_rank_quantile_by_hand() {
    // ceil(0.9 n): n=1 -> 1, n=5 -> 5, n=11 -> 10, n=20 -> 18.
    for (n, rank) in [(1usize, 1usize), (5, 5), (11, 10), (20, 18)] {
        let v: Vec<f64> = (1..=n).rev().map(|i| i as f64).collect();
        assert_eq!(subject_features(&v).unwrap().q90, rank as f64, "n={n}");
    }
}

proptest! {
    #[test]
    fn features_ignore_order(mut v in prop::collection::vec(-100.0f64..100.0, 1..40), seed in any::<u64>()) {
        let a = subject_features(&v).unwrap();
        SeededRng::new(seed, 0).shuffle(&mut v);
        let b = subject_features(&v).unwrap();
        prop_assert!((a.mean - b.mean).abs() < 1e-9 && (a.std - b.std).abs() < 1e-9);
        prop_assert_eq!((a.max, a.q90), (b.max, b.q90));
        prop_assert!(a.mean <= a.max && a.q90 <= a.max && a.std >= 0.0);
    }

    #[test]
    fn knn_translation_invariant(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = SeededRng::new(seed, 0);
        let shift: Vec<f64> = (0..4).map(|_| 10.0 * rng.normal()).collect();
        let z: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let refs: Vec<(SubjectId, Vec<f64>)> =
            (0..6).map(|i| (sid(&i.to_string()), (0..4).map(|_| rng.normal()).collect())).collect();
        let moved: Vec<(SubjectId, Vec<f64>)> = refs
            .iter()
            .map(|(s, r)| (s.clone(), r.iter().zip(&shift).map(|(a, b)| a + b).collect()))
            .collect();
        let zs: Vec<f64> = z.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let a = knn_score(&z, &ReferenceSet::new(refs).unwrap(), k, None).unwrap();
        let b = knn_score(&zs, &ReferenceSet::new(moved).unwrap(), k, None).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}

fn separable_toy() -> (Vec<SubjectFeatureVector>, Vec<bool>) {
    let mut rng = SeededRng::new(42, 7);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for i in 0..20 {
        let member = i % 2 == 0;
        let c = if member { 1.0 } else { -1.0 };
        feats.push(SubjectFeatureVector {
            mean: c + 0.2 * rng.normal(),
            std: 0.5 + 0.1 * rng.uniform(),
            max: 2.0 * c + 0.2 * rng.normal(),
            q90: 1.5 * c + 0.2 * rng.normal(),
        });
        labels.push(member);
    }
    (feats, labels)
}

#[test]
fn attacker_learns_separable_toy() {
    let (feats, labels) = separable_toy();
    let (attacker, trace) = train_mlp_attacker(&feats, &labels, 1e-3, 200, 42).unwrap();
    assert_eq!(trace.len(), 201);
    assert!(trace[200] < trace[0], "{} -> {}", trace[0], trace[200]);
    let correct = feats
        .iter()
        .zip(&labels)
        .filter(|(f, &l)| (mlp_score(&attacker, f) >= 0.5) == l)
        .count();
    assert_eq!(correct, feats.len());
    let (again, _) = train_mlp_attacker(&feats, &labels, 1e-3, 200, 42).unwrap();
    assert_eq!(again.params().values(), attacker.params().values());
}

#[test]
fn attacker_needs_both_classes() {
    let (feats, _) = separable_toy();
    assert!(train_mlp_attacker(&feats, &vec![true; feats.len()], 1e-3, 10, 1).is_err());
}

#[test]
fn scores_are_probabilities() {
    let (feats, labels) = separable_toy();
    let (attacker, _) = train_mlp_attacker(&feats, &labels, 1e-3, 50, 3).unwrap();
    for scale in [1.0, 1e3, 1e8, -1e8, 1e300] {
        let v = SubjectFeatureVector { mean: scale, std: scale.abs(), max: scale, q90: scale };
        let s = mlp_score(&attacker, &v);
        assert!(s > 0.0 && s < 1.0, "{scale}: {s}");
        assert_eq!(s, mlp_score(&attacker, &v));
    }
}

fn hand_built(w_mean: f64) -> MlpAttacker {
    // Hidden unit 0 passes the mean feature through; output reads unit 0.
    let mut w1 = vec![0.0; 16 * 4];
    w1[0] = w_mean;
    let mut w2 = vec![0.0; 16];
    w2[0] = 1.0;
    MlpAttacker::from_weights(
        vec![
            Tensor::new(vec![16, 4], w1).unwrap(),
            Tensor::zeros(&[16]),
            Tensor::new(vec![1, 16], w2).unwrap(),
            Tensor::zeros(&[1]),
        ],
        [0.0; 4],
        [1.0; 4],
    )
    .unwrap()
}

#[test]
fn zero_weights_score_one_half() {
    let a = hand_built(0.0);
    let v = SubjectFeatureVector { mean: 3.0, std: 1.0, max: 9.0, q90: 4.0 };
    assert_eq!(mlp_score(&a, &v), 0.5);
}

#[test]
fn positive_path_is_monotone() {
    let a = hand_built(2.0);
    let mut last = 0.0;
    for m in [0.1, 0.5, 1.0, 2.0] {
        let s = mlp_score(&a, &SubjectFeatureVector { mean: m, std: 0.0, max: 0.0, q90: 0.0 });
        assert!(s > last);
        last = s;
    }
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let (feats, labels) = separable_toy();
    for seed in 0..5 {
        let attacker = MlpAttacker::init(seed);
        let rows: Vec<[f64; 4]> = feats.iter().map(|f| attacker.standardize(f)).collect();
        let values = attacker.params().values().to_vec();
        let err = finite_diff_check(
            |p| {
                let a = MlpAttacker::from_weights(p.to_vec(), [0.0; 4], [1.0; 4]).unwrap();
                a.bce(&rows, &labels).unwrap()
            },
            &values,
            usize::MAX,
            &mut SeededRng::new(seed, 1),
        );
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn subject_embedding_cases() {
    let mut rng = SeededRng::new(8, 0);
    let m = EncoderModel::init(&EncoderConfig::desk(Family::Ts2vec)).unwrap();
    let ws: Vec<Vec<f64>> = (0..4).map(|_| window(&mut rng)).collect();
    let refs: Vec<&[f64]> = ws.iter().map(Vec::as_slice).collect();
    assert_eq!(subject_embedding(&m, &refs[..1], 10, &mut rng).unwrap(), m.encode(&ws[0]).unwrap());

    let z = subject_embedding(&m, &refs, 10, &mut rng).unwrap();
    let rev: Vec<&[f64]> = refs.iter().rev().copied().collect();
    let zr = subject_embedding(&m, &rev, 10, &mut rng).unwrap();
    let mut sum = vec![0.0; 64];
    for w in &ws {
        for (s, v) in sum.iter_mut().zip(m.encode(w).unwrap()) {
            *s += v;
        }
    }
    for i in 0..64 {
        assert!((z[i] - zr[i]).abs() < 1e-12);
        assert!((z[i] - sum[i] / 4.0).abs() < 1e-12);
    }

    // Cap 2 of 4: the mean of the two windows the sampler picks.
    let mut a = SeededRng::new(3, 3);
    let capped = subject_embedding(&m, &refs, 2, &mut a).unwrap();
    let picked = SeededRng::new(3, 3).sample_without_replacement(4, 2);
    let (e0, e1) = (m.encode(&ws[picked[0]]).unwrap(), m.encode(&ws[picked[1]]).unwrap());
    for i in 0..64 {
        assert!((capped[i] - (e0[i] + e1[i]) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn knn_examples() {
    let refs = ReferenceSet::new(vec![(sid("a"), vec![3.0, 4.0])]).unwrap();
    assert_eq!(knn_score(&[0.0, 0.0], &refs, 1, None).unwrap(), -5.0);
    assert_eq!(knn_score(&[0.0, 0.0], &refs, 5, None).unwrap(), -5.0);
    let refs = ReferenceSet::new(vec![(sid("a"), vec![3.0, 4.0]), (sid("b"), vec![0.0, 0.0])]).unwrap();
    assert_eq!(knn_score(&[0.0, 0.0], &refs, 1, None).unwrap(), 0.0);
    assert_eq!(knn_score(&[0.0, 0.0], &refs, 1, Some(&sid("b"))).unwrap(), -5.0);
    assert!(knn_score(&[0.0, 0.0], &ReferenceSet::default(), 1, None).is_err());
    assert!(ReferenceSet::new(vec![(sid("a"), vec![1.0]), (sid("b"), vec![1.0, 2.0])]).is_err());
}

#[test]
fn knn_matches_exhaustive_search() {
    let mut rng = SeededRng::new(10, 0);
    for _ in 0..20 {
        let refs: Vec<(SubjectId, Vec<f64>)> =
            (0..20).map(|i| (sid(&i.to_string()), (0..8).map(|_| rng.normal()).collect())).collect();
        let z: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let mut all: Vec<f64> = refs
            .iter()
            .map(|(_, r)| r.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = -(all[0] + all[1] + all[2] + all[3] + all[4]) / 5.0;
        let got = knn_score(&z, &ReferenceSet::new(refs).unwrap(), 5, None).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }
}

#[test]
fn score_dump_roundtrip() {
    let rows = vec![
        WindowScore { subject: sid("1"), window_index: Some(0), value: -0.25 },
        WindowScore { subject: sid("2"), window_index: None, value: 1e-17 },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    write_score_dump(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("dataset_id,subject_key,window_index,score\nd,1,0,-0.25\n"));
    assert_eq!(read_score_dump(&path).unwrap(), rows);
}
