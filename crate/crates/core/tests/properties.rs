use std::collections::{BTreeMap, HashSet};

use activesearch::fewshot::{sample_episode, EpisodeConfig};
use activesearch::linalg::Matrix;
use activesearch::metrics::f1_scores;
use activesearch::netcore::{grad_check, softmax_probs, Architecture, Embedder, LinearHead};
use activesearch::seeding::rng_from_seed;
use activesearch::strategies::{select_top_n, StrategyKind};
use activesearch::{Classifier, Sample, ScoredPool};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn passthrough(biases: Vec<f64>) -> Classifier {
    let k = biases.len();
    Classifier::new(Embedder::Identity { dim: k }, LinearHead { weights: Matrix::identity(k), biases }).unwrap()
}

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-300.0f64..300.0, 1..12)) {
        let p = softmax_probs(&passthrough(vec![0.0; logits.len()]), &logits).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn softmax_ignores_common_bias_shift(
        logits in prop::collection::vec(-30.0f64..30.0, 2..10),
        shift in -100.0f64..100.0,
    ) {
        let k = logits.len();
        let p = softmax_probs(&passthrough(vec![0.0; k]), &logits).unwrap();
        let q = softmax_probs(&passthrough(vec![shift; k]), &logits).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn top_n_is_sorted_and_dominates_the_rest(
        scores in prop::collection::vec(prop_oneof![Just(0.5f64), 0.0f64..1.0], 0..40),
        n in 0usize..50,
    ) {
        let ids: Vec<u64> = (0..scores.len() as u64).map(|i| (i * 7919) % 1000).collect();
        prop_assume!(ids.iter().collect::<HashSet<_>>().len() == ids.len());
        let by_id: BTreeMap<u64, f64> = ids.iter().copied().zip(scores.iter().copied()).collect();
        let pool = ScoredPool { ids, scores, strategy: StrategyKind::Random, rare_class: None };
        let top = select_top_n(&pool, n);
        prop_assert_eq!(top.len(), n.min(pool.len()));
        for w in top.windows(2) {
            let (a, b) = (by_id[&w[0]], by_id[&w[1]]);
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
        if let Some(last) = top.last() {
            let floor = by_id[last];
            let chosen: HashSet<u64> = top.iter().copied().collect();
            for (&id, &s) in &by_id {
                if !chosen.contains(&id) {
                    prop_assert!(s < floor || (s == floor && id > *last));
                }
            }
        }
    }

    #[test]
    fn episodes_have_disjoint_support_and_query(seed in any::<u64>(), way in 2usize..5, shot in 1usize..3, queries in 1usize..4) {
        let mut rng = rng_from_seed(seed);
        let data: Vec<Sample> = (0..60u64)
            .map(|id| Sample { id, features: vec![id as f64], label: (id % 6) as usize })
            .collect();
        let cfg = EpisodeConfig { way, shot, queries, episodes: 1, seed };
        let ep = sample_episode(&data, &cfg, &mut rng).unwrap();
        let s: HashSet<u64> = ep.support.iter().map(|x| x.id).collect();
        let q: HashSet<u64> = ep.query.iter().map(|x| x.id).collect();
        prop_assert!(s.is_disjoint(&q));
        prop_assert_eq!(s.len(), way * shot);
        prop_assert_eq!(q.len(), way * queries);
        prop_assert_eq!(ep.classes.iter().collect::<HashSet<_>>().len(), way);
        for x in ep.support.iter().chain(&ep.query) {
            // local label maps back to the sample's true class
            prop_assert_eq!((x.id % 6) as usize, ep.classes[x.label]);
        }
    }

    #[test]
    fn f1_is_bounded_and_macro_is_the_mean(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..30),
    ) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let r = f1_scores(&preds, &labels, &[0, 1, 2, 3]).unwrap();
        prop_assert!(r.per_class.iter().all(|&(_, f)| (0.0..=1.0).contains(&f)));
        let mean = r.per_class.iter().map(|&(_, f)| f).sum::<f64>() / 4.0;
        prop_assert!((r.macro_f1 - mean).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_gradients_match_finite_differences(seed in any::<u64>(), hidden in prop_oneof![Just(None), (1usize..6).prop_map(Some)]) {
        let mut rng = rng_from_seed(seed);
        let d = rng.random_range(1..5);
        let k = rng.random_range(2..5);
        let arch = match hidden {
            None => Architecture::Identity,
            Some(h) => Architecture::OneHidden { hidden: h },
        };
        let mut c = Classifier::init(arch, d, k, 0.5, &mut rng);
        c.head.biases.iter_mut().for_each(|b| *b = rng.sample::<f64, _>(StandardNormal));
        if let Embedder::OneHidden(layer) = &mut c.embedder {
            // keep pre-activations away from the ReLU kink
            layer.biases.iter_mut().for_each(|b| *b = if rng.random::<bool>() { 0.7 } else { -0.7 });
        }
        let batch: Vec<Sample> = (0..rng.random_range(1..8))
            .map(|i| Sample {
                id: i,
                features: (0..d).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect(),
                label: rng.random_range(0..k),
            })
            .collect();
        let err = grad_check(&c, &batch, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "relative error {err:e}");
    }
}
