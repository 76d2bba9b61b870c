use super::*;
use crate::types::{LabelEntry, RngSeed};
use proptest::prelude::*;
use rand::Rng;

fn unit(v: &[f32]) -> EmbeddingVector {
    EmbeddingVector::normalize(v).unwrap()
}

fn table_from(vectors: &[&[f32]]) -> LabelTable {
    LabelTable::new(
        vectors
            .iter()
            .enumerate()
            .map(|(i, v)| LabelEntry {
                id: LabelId(i as u32),
                text: format!("l{i}"),
                text_embedding: unit(v),
            })
            .collect(),
    )
    .unwrap()
}

fn random_table(n: u32, dim: usize, rng: &mut impl Rng) -> LabelTable {
    LabelTable::new(
        (0..n)
            .map(|i| LabelEntry {
                id: LabelId(i),
                text: format!("l{i}"),
                text_embedding: unit(&(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f32>>()),
            })
            .collect(),
    )
    .unwrap()
}

fn cand(ids: &[u32]) -> CandidateSet {
    CandidateSet::new(ids.iter().map(|&i| LabelId(i)).collect()).unwrap()
}

fn set(ids: &[u32]) -> BTreeSet<LabelId> {
    ids.iter().map(|&i| LabelId(i)).collect()
}

fn dist(ids: &[u32], probs: &[f64]) -> ProbabilityDistribution {
    ProbabilityDistribution::new(ids.iter().map(|&i| LabelId(i)).collect(), probs.to_vec()).unwrap()
}

fn random_simplex(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..1.0)).collect();
    let t: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / t).collect()
}

#[test]
fn candidate_set_validation() {
    assert!(CandidateSet::new(vec![]).is_err());
    assert!(CandidateSet::new(vec![LabelId(1), LabelId(1)]).is_err());
    assert_eq!(cand(&[3, 1]).labels(), &[LabelId(3), LabelId(1)]);
}

#[test]
fn mode_names_parse() {
    for (s, m) in [
        ("zs", FusionMode::ZeroShotOnly),
        ("exemplar", FusionMode::ExemplarOnly),
        ("avg-prob", FusionMode::AvgProb),
        ("avg-emb", FusionMode::AvgEmb),
        ("aim-prob", FusionMode::AimProb),
        ("aim-emb", FusionMode::AimEmb),
    ] {
        assert_eq!(s.parse::<FusionMode>().unwrap(), m);
        assert_eq!(m.to_string().parse::<FusionMode>().unwrap(), m);
    }
    assert!("aim".parse::<FusionMode>().is_err());
}

#[test]
fn logits_of_matching_and_orthogonal_candidates() {
    let labels = table_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let q = unit(&[1.0, 0.0]);
    let l = zeroshot_logits(&q, &cand(&[0, 1]), &labels, &ZeroShotConfig::default()).unwrap();
    assert!((l[0] - 100.0).abs() < 1e-9);
    assert!(l[1].abs() < 1e-9);
}

#[test]
fn unit_temperature_logit_is_cosine() {
    let labels = table_from(&[&[1.0, 0.0]]);
    let q = unit(&[0.5, (0.75f32).sqrt()]);
    let l = zeroshot_logits(&q, &cand(&[0]), &labels, &ZeroShotConfig { temperature: 1.0 }).unwrap();
    assert!((l[0] - 0.5).abs() < 1e-6);
}

#[test]
fn logits_match_scalar_loop() {
    let mut rng = RngSeed(3).rng();
    let labels = random_table(5, 16, &mut rng);
    let q = unit(&(0..16).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f32>>());
    let l = zeroshot_logits(&q, &cand(&[0, 1, 2, 3, 4]), &labels, &ZeroShotConfig::default()).unwrap();
    for (i, li) in l.iter().enumerate() {
        let t = labels.text_embedding(LabelId(i as u32)).unwrap().as_slice();
        let s: f64 = q.as_slice().iter().zip(t).map(|(&a, &b)| a as f64 * b as f64).sum();
        assert!((li - 100.0 * s).abs() < 1e-6);
    }
}

#[test]
fn missing_text_embedding_is_reported() {
    let labels = table_from(&[&[1.0, 0.0]]);
    let err = zeroshot_logits(&unit(&[1.0, 0.0]), &cand(&[0, 4]), &labels, &ZeroShotConfig::default());
    assert!(matches!(err, Err(Error::MissingTextEmbedding(LabelId(4)))));
}

#[test]
fn zeroshot_probabilities() {
    let labels = table_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let zs = ZeroShotConfig::default();
    let p = zeroshot_proba(&unit(&[1.0, 1.0]), &cand(&[0, 1]), &labels, &zs).unwrap();
    assert!((p.probs()[0] - 0.5).abs() < 1e-9);
    let p = zeroshot_proba(&unit(&[1.0, 0.0]), &cand(&[0, 1]), &labels, &zs).unwrap();
    assert!((1.0 - p.probs()[0] - 3.720075976020836e-44).abs() < 1e-15);
    assert!((p.probs()[1] - 3.720075976020836e-44).abs() < 1e-50);
}

#[test]
fn zeroshot_argmax_follows_similarity() {
    let mut rng = RngSeed(9).rng();
    let labels = random_table(10, 12, &mut rng);
    let c = cand(&(0..10).collect::<Vec<_>>());
    for _ in 0..20 {
        let q = unit(&(0..12).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f32>>());
        let p = zeroshot_proba(&q, &c, &labels, &ZeroShotConfig::default()).unwrap();
        let best = (0..10u32)
            .max_by(|&a, &b| {
                let sa = q.dot(labels.text_embedding(LabelId(a)).unwrap());
                let sb = q.dot(labels.text_embedding(LabelId(b)).unwrap());
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        assert_eq!(p.argmax().unwrap(), LabelId(best));
    }
}

#[test]
fn coverage_extremes_are_exact() {
    let mut rng = RngSeed(1).rng();
    let labels = random_table(6, 8, &mut rng);
    let c = cand(&[0, 1, 2, 3, 4, 5]);
    let zs = ZeroShotConfig::default();
    for _ in 0..10 {
        let q = unit(&(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f32>>());
        let all = coverage_probability(&q, &c, &labels, &set(&[0, 1, 2, 3, 4, 5, 9]), &zs).unwrap();
        let none = coverage_probability(&q, &c, &labels, &set(&[7]), &zs).unwrap();
        assert_eq!(all, 1.0);
        assert_eq!(none, 0.0);
        let part = coverage_probability(&q, &c, &labels, &set(&[1, 3]), &zs).unwrap();
        let rest = coverage_probability(&q, &c, &labels, &set(&[0, 2, 4, 5]), &zs).unwrap();
        assert!((part + rest - 1.0).abs() < 1e-12);
    }
}

#[test]
fn coverage_of_symmetric_pair_is_half() {
    let labels = table_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let w = coverage_probability(
        &unit(&[1.0, 1.0]),
        &cand(&[0, 1]),
        &labels,
        &set(&[0]),
        &ZeroShotConfig::default(),
    )
    .unwrap();
    assert!((w - 0.5).abs() < 1e-12);
}

#[test]
fn aim_prob_at_zero_weight_is_zero_shot() {
    let p_z = dist(&[0, 1, 2], &[0.2, 0.5, 0.3]);
    let p_e = dist(&[0, 2], &[0.9, 0.1]);
    let out = fuse_prob(&p_z, &p_e, 0.0, FusionMode::AimProb, 0.5).unwrap();
    assert_eq!(out.probs(), p_z.probs());
}

#[test]
fn aim_prob_full_weight_uniform_zero_shot_follows_exemplars() {
    let p_z = dist(&[0, 1, 2], &[1.0 / 3.0; 3]);
    let p_e = dist(&[0, 1, 2], &[0.1, 0.7, 0.2]);
    let out = fuse_prob(&p_z, &p_e, 1.0, FusionMode::AimProb, 0.5).unwrap();
    for (a, b) in out.probs().iter().zip(p_e.probs()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(out.argmax().unwrap(), LabelId(1));
}

#[test]
fn aim_prob_full_weight_gives_covered_product() {
    let p_z = dist(&[0, 1, 2], &[0.5, 0.3, 0.2]);
    let p_e = dist(&[0, 1], &[0.25, 0.75]);
    let out = fuse_prob(&p_z, &p_e, 1.0, FusionMode::AimProb, 0.5).unwrap();
    let z = 0.5 * 0.25 + 0.3 * 0.75;
    assert!((out.probs()[0] - 0.125 / z).abs() < 1e-12);
    assert!((out.probs()[1] - 0.225 / z).abs() < 1e-12);
    assert_eq!(out.probs()[2], 0.0);
}

#[test]
fn aim_prob_empty_cover_with_weight_errors() {
    let p_z = dist(&[0, 1], &[0.5, 0.5]);
    let empty = ProbabilityDistribution::partial(vec![], vec![]).unwrap();
    assert!(matches!(
        fuse_prob(&p_z, &empty, 0.3, FusionMode::AimProb, 0.5),
        Err(Error::EmptyCoveredSet(_))
    ));
    assert_eq!(
        fuse_prob(&p_z, &empty, 0.0, FusionMode::AimProb, 0.5).unwrap().probs(),
        p_z.probs()
    );
}

#[test]
fn avg_prob_blends_and_zero_extends() {
    let p_z = dist(&[0, 1, 2], &[0.2, 0.2, 0.6]);
    let p_e = dist(&[0], &[1.0]);
    let out = fuse_prob(&p_z, &p_e, 0.0, FusionMode::AvgProb, 0.5).unwrap();
    assert!((out.probs()[0] - 0.6).abs() < 1e-12);
    assert!((out.probs()[1] - 0.1).abs() < 1e-12);
    assert!((out.probs()[2] - 0.3).abs() < 1e-12);
}

#[test]
fn restriction_renormalizes_over_covered_candidates() {
    let p_e = dist(&[0, 1, 5], &[0.2, 0.3, 0.5]);
    let r = restrict_to_covered(&p_e, &cand(&[1, 0, 2]), &set(&[0, 1])).unwrap();
    assert_eq!(r.support(), &[LabelId(1), LabelId(0)]);
    assert!((r.probs()[0] - 0.6).abs() < 1e-12);
    assert!((r.probs()[1] - 0.4).abs() < 1e-12);
    // no mass inside the candidates: uniform
    let r = restrict_to_covered(&dist(&[5], &[1.0]), &cand(&[0, 1]), &set(&[0, 1])).unwrap();
    assert_eq!(r.probs(), &[0.5, 0.5]);
}

#[test]
fn embedding_fusion_endpoints() {
    let mut rng = RngSeed(4).rng();
    let labels = random_table(8, 6, &mut rng);
    let c = cand(&(0..8).collect::<Vec<_>>());
    let zs = ZeroShotConfig::default();
    for _ in 0..20 {
        let v_i = unit(&(0..6).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f32>>());
        let v_e = labels.text_embedding(LabelId(rng.gen_range(0..8))).unwrap().clone();
        let zero = fuse_embedding(&v_e, &v_i, 0.0, &c, &labels, &zs).unwrap();
        let plain = zeroshot_proba(&v_i, &c, &labels, &zs).unwrap();
        assert_eq!(zero.distribution.as_ref().unwrap(), &plain);
        let one = fuse_embedding(&v_e, &v_i, 1.0, &c, &labels, &zs).unwrap();
        let e_only = zeroshot_proba(&v_e, &c, &labels, &zs).unwrap();
        assert_eq!(one.distribution.as_ref().unwrap(), &e_only);
        // collinear blend of v_I with itself
        for alpha in [0.2, 0.5, 0.9] {
            let same = fuse_embedding(&v_i, &v_i, alpha, &c, &labels, &zs).unwrap();
            assert_eq!(same.argmax_label, plain.argmax().unwrap());
        }
    }
}

#[test]
fn antipodal_blend_falls_back_to_image() {
    let labels = table_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let v_i = unit(&[0.0, 1.0]);
    let v_e = unit(&[0.0, -1.0]);
    let out = fuse_embedding(&v_e, &v_i, 0.5, &cand(&[0, 1]), &labels, &ZeroShotConfig::default()).unwrap();
    assert_eq!(out.argmax_label, LabelId(1));
}

#[test]
fn long_tail_marks_rarest_uncovered() {
    let counts = [(0u32, 10usize), (1, 1), (2, 5), (3, 2), (4, 50), (5, 3)]
        .into_iter()
        .map(|(l, c)| (LabelId(l), c))
        .collect();
    assert_eq!(long_tail_coverage(&counts, 2.0 / 3.0), set(&[0, 4]));
}

#[test]
fn context_routes_every_mode() {
    let labels = table_from(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
    let c = cand(&[0, 1, 2]);
    let covered = set(&[0, 1]);
    let zs = ZeroShotConfig::default();
    // query looks like label 2 but the exemplar model insists on label 0
    let q = unit(&[0.1, 0.0, 1.0]);
    let ex = PredictionOutput::from_distribution(dist(&[0, 1], &[0.9, 0.1]))
        .unwrap()
        .with_embedding(labels.text_embedding(LabelId(0)).unwrap().clone());
    let mut expect = vec![
        (FusionMode::ZeroShotOnly, 2),
        (FusionMode::ExemplarOnly, 0),
        (FusionMode::AimProb, 2),
        (FusionMode::AimEmb, 2),
    ];
    expect.push((FusionMode::AvgProb, 2));
    for (mode, label) in expect {
        let fusion = FusionConfig::new(mode);
        let ctx = FusionContext {
            labels: &labels,
            candidates: &c,
            covered: &covered,
            zero_shot: &zs,
            fusion: &fusion,
        };
        assert_eq!(ctx.predict(&q, Some(&ex)).unwrap(), LabelId(label), "{mode}");
        assert_eq!(ctx.predict(&q, None).unwrap(), LabelId(2));
    }
}

#[test]
fn override_replaces_live_coverage() {
    let labels = table_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let c = cand(&[0, 1]);
    let covered = set(&[0, 1]);
    let zs = ZeroShotConfig::default();
    let q = unit(&[1.0, 0.05]);
    let ex = PredictionOutput::from_distribution(dist(&[1], &[1.0]))
        .unwrap()
        .with_embedding(labels.text_embedding(LabelId(1)).unwrap().clone());
    let mut fusion = FusionConfig::new(FusionMode::AimEmb);
    let ctx = |f: &FusionConfig| {
        FusionContext {
            labels: &labels,
            candidates: &c,
            covered: &covered,
            zero_shot: &zs,
            fusion: f,
        }
        .predict(&q, Some(&ex))
        .unwrap()
    };
    assert_eq!(ctx(&fusion), LabelId(1));
    fusion.coverage_override = Some(set(&[1]));
    assert_eq!(ctx(&fusion), LabelId(0));
}

proptest! {
    #[test]
    fn aim_prob_is_a_distribution(seed in any::<u64>(), n in 1usize..12, w in 0.0f64..=1.0) {
        let mut rng = RngSeed(seed).rng();
        let ids: Vec<u32> = (0..n as u32).collect();
        let p_z = dist(&ids, &random_simplex(n, &mut rng));
        let covered = rng.gen_range(1..=n);
        let p_e = dist(&ids[..covered], &random_simplex(covered, &mut rng));
        for mode in [FusionMode::AimProb, FusionMode::AvgProb] {
            let out = fuse_prob(&p_z, &p_e, w, mode, 0.5).unwrap();
            prop_assert!((out.total() - 1.0).abs() < 1e-9);
            prop_assert!(out.probs().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn aim_prob_is_continuous_in_weight(seed in any::<u64>(), w in 0.0f64..0.99) {
        let mut rng = RngSeed(seed).rng();
        let p_z = dist(&[0, 1, 2, 3], &random_simplex(4, &mut rng));
        let p_e = dist(&[0, 1], &random_simplex(2, &mut rng));
        let a = fuse_prob(&p_z, &p_e, w, FusionMode::AimProb, 0.5).unwrap();
        let b = fuse_prob(&p_z, &p_e, w + 0.01, FusionMode::AimProb, 0.5).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() <= 0.01 + 1e-12);
        }
    }
}
