//! Pool scoring and top-N selection. Every strategy follows one convention:
//! a higher score means "select first".

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{usage, Error, Result};
use crate::fewshot::{prototype, RelationModel};
use crate::netcore::{softmax_probs, Classifier, Embedder};
use crate::scalar::{sq_dist, Scalar};
use crate::seeding::{derived_rng, stream};
use crate::synthdata::{Sample, SampleId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    /// Descending softmax probability of one rare class.
    MaxRareProb,
    /// Descending entropy of the softmax output.
    Entropy,
    Random,
    /// Ascending squared distance to the rare class prototype.
    ProtoDistance,
    /// Descending relation-head similarity to the rare class prototype.
    RelationSim,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] =
        [StrategyKind::MaxRareProb, StrategyKind::Entropy, StrategyKind::Random, StrategyKind::ProtoDistance, StrategyKind::RelationSim];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::MaxRareProb => "max_rare_prob",
            StrategyKind::Entropy => "entropy",
            StrategyKind::Random => "random",
            StrategyKind::ProtoDistance => "proto_distance",
            StrategyKind::RelationSim => "relation_sim",
        }
    }

    /// Strategies that score the pool separately for each rare class.
    pub fn is_per_class(self) -> bool {
        !matches!(self, StrategyKind::Entropy | StrategyKind::Random)
    }

    pub fn is_few_shot(self) -> bool {
        matches!(self, StrategyKind::ProtoDistance | StrategyKind::RelationSim)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// One score per pool sample, stored in pool order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPool<T> {
    pub ids: Vec<SampleId>,
    pub scores: Vec<T>,
    pub strategy: StrategyKind,
    pub rare_class: Option<usize>,
}

impl<T: Scalar> ScoredPool<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn score_each<T, F>(pool: &[Sample<T>], f: F) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&Sample<T>) -> Result<T> + Sync,
{
    let scores: Vec<T> = pool.par_iter().map(&f).collect::<Result<_>>()?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(crate::error::numeric(format!("non-finite score for sample {}", pool[i].id)));
    }
    Ok(scores)
}

fn ids<T>(pool: &[Sample<T>]) -> Vec<SampleId> {
    pool.iter().map(|s| s.id).collect()
}

pub fn score_max_rare_prob<T: Scalar>(classifier: &Classifier<T>, pool: &[Sample<T>], rare_class: usize) -> Result<ScoredPool<T>> {
    if rare_class >= classifier.num_classes() {
        return Err(usage(format!("rare class {rare_class} outside the classifier's {} classes", classifier.num_classes())));
    }
    let scores = score_each(pool, |s| Ok(softmax_probs(classifier, &s.features)?[rare_class]))?;
    Ok(ScoredPool { ids: ids(pool), scores, strategy: StrategyKind::MaxRareProb, rare_class: Some(rare_class) })
}

/// `−Σ p ln p` in nats; zero-probability terms contribute nothing.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    p.iter().filter(|&&x| x > T::zero()).fold(T::zero(), |acc, &x| acc - x * x.ln())
}

pub fn score_entropy<T: Scalar>(classifier: &Classifier<T>, pool: &[Sample<T>]) -> Result<ScoredPool<T>> {
    let scores = score_each(pool, |s| Ok(entropy(&softmax_probs(classifier, &s.features)?)))?;
    Ok(ScoredPool { ids: ids(pool), scores, strategy: StrategyKind::Entropy, rare_class: None })
}

/// I.i.d. uniform `[0, 1)` scores.
pub fn score_random<T: Scalar>(pool: &[Sample<T>], seed: u64) -> ScoredPool<T> {
    let mut rng = derived_rng(seed, &[stream::RANDOM_SCORES]);
    let scores = pool.iter().map(|_| T::of(rng.random::<f64>())).collect();
    ScoredPool { ids: ids(pool), scores, strategy: StrategyKind::Random, rare_class: None }
}

/// Negated squared distance between each embedded pool sample and the mean
/// embedded support sample.
pub fn score_proto_distance<T: Scalar>(embedder: &Embedder<T>, support: &[Sample<T>], pool: &[Sample<T>]) -> Result<ScoredPool<T>> {
    let proto = prototype(embedder, support)?;
    let scores = score_each(pool, |s| Ok(-sq_dist(&embedder.embed(&s.features)?, &proto)))?;
    let rare_class = support.first().map(|s| s.label);
    Ok(ScoredPool { ids: ids(pool), scores, strategy: StrategyKind::ProtoDistance, rare_class })
}

/// Relation-head similarity in `[0, 1]` between the support prototype and
/// each pool sample.
pub fn score_relation<T: Scalar>(model: &RelationModel<T>, support: &[Sample<T>], pool: &[Sample<T>]) -> Result<ScoredPool<T>> {
    if !model.is_trained() {
        return Err(usage("relation model has not been trained"));
    }
    let proto = prototype(&model.embedder, support)?;
    let scores = score_each(pool, |s| {
        let q = model.embedder.embed(&s.features)?;
        Ok(model.relation(&proto, &q))
    })?;
    let rare_class = support.first().map(|s| s.label);
    Ok(ScoredPool { ids: ids(pool), scores, strategy: StrategyKind::RelationSim, rare_class })
}

/// The `n` highest-scoring ids, descending by score, ties broken by ascending id.
pub fn select_top_n<T: Scalar>(scored: &ScoredPool<T>, n: usize) -> Vec<SampleId> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        scored.scores[b].partial_cmp(&scored.scores[a]).unwrap_or(Ordering::Equal).then(scored.ids[a].cmp(&scored.ids[b]))
    };
    let n = n.min(order.len());
    if n == 0 {
        return Vec::new();
    }
    if n < order.len() {
        order.select_nth_unstable_by(n - 1, cmp);
        order.truncate(n);
    }
    order.sort_unstable_by(cmp);
    order.into_iter().map(|i| scored.ids[i]).collect()
}

/// Writes `id,score,strategy,rare_class` (rare_class empty for pool-wide strategies).
pub fn write_scored_csv<T: Scalar, W: Write>(mut w: W, scored: &ScoredPool<T>) -> Result<()> {
    writeln!(w, "id,score,strategy,rare_class")?;
    let rare = scored.rare_class.map(|c| c.to_string()).unwrap_or_default();
    for (id, s) in scored.ids.iter().zip(&scored.scores) {
        writeln!(w, "{id},{s},{},{rare}", scored.strategy)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::netcore::LinearHead;

    fn pool2d(points: &[[f64; 2]]) -> Vec<Sample<f64>> {
        points.iter().enumerate().map(|(i, p)| Sample { id: i as u64, features: p.to_vec(), label: 0 }).collect()
    }

    fn scored(scores: Vec<f64>) -> ScoredPool<f64> {
        ScoredPool { ids: (0..scores.len() as u64).collect(), scores, strategy: StrategyKind::Random, rare_class: None }
    }

    #[test]
    fn top_n_examples() {
        assert_eq!(select_top_n(&scored(vec![0.01, 0.5, 0.3]), 2), vec![1, 2]);
        assert!(select_top_n(&scored(vec![0.01, 0.5, 0.3]), 0).is_empty());
        assert_eq!(select_top_n(&scored(vec![1.0; 6]), 3), vec![0, 1, 2]);
        assert_eq!(select_top_n(&scored(vec![0.2, 0.9]), 10), vec![1, 0]);
    }

    #[test]
    fn tie_break_uses_ids_not_positions() {
        let s = ScoredPool { ids: vec![9, 4, 7], scores: vec![1.0, 1.0, 1.0], strategy: StrategyKind::Entropy, rare_class: None };
        assert_eq!(select_top_n(&s, 2), vec![4, 7]);
    }

    #[test]
    fn zero_classifier_scores_one_over_k() {
        let c = Classifier::new(Embedder::Identity { dim: 2 }, LinearHead::zeros(4, 2)).unwrap();
        let pool = pool2d(&[[1.0, 2.0], [-3.0, 0.5]]);
        let s = score_max_rare_prob(&c, &pool, 3).unwrap();
        assert!(s.scores.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let e = score_entropy(&c, &pool).unwrap();
        assert!(e.scores.iter().all(|&x| (x - 4f64.ln()).abs() < 1e-14));
        assert!(score_max_rare_prob(&c, &pool, 4).is_err());
        assert!(score_max_rare_prob(&c, &[], 1).unwrap().is_empty());
    }

    #[test]
    fn entropy_values() {
        // −(0.7 ln 0.7 + 0.2 ln 0.2 + 0.1 ln 0.1), extended precision: 0.801818552543337...
        let h: f64 = entropy(&[0.7, 0.2, 0.1]);
        assert!((h - 0.801_818_552_543_337_3).abs() < 1e-15, "{h}");
        assert!(entropy(&[1.0 - 1e-12, 1e-12]) < 1e-10);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn bias_shift_leaves_scores_unchanged() {
        let w = Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.1], vec![-0.5, 0.7]]);
        let a = Classifier::new(Embedder::Identity { dim: 2 }, LinearHead { weights: w.clone(), biases: vec![0.1, -0.2, 0.3] }).unwrap();
        let b = Classifier::new(Embedder::Identity { dim: 2 }, LinearHead { weights: w, biases: vec![5.1, 4.8, 5.3] }).unwrap();
        let pool = pool2d(&[[0.0, 1.0], [2.0, -1.0], [0.3, 0.3]]);
        let sa = score_max_rare_prob(&a, &pool, 2).unwrap();
        let sb = score_max_rare_prob(&b, &pool, 2).unwrap();
        for (x, y) in sa.scores.iter().zip(&sb.scores) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(select_top_n(&sa, 3), select_top_n(&sb, 3));
    }

    #[test]
    fn random_scores_are_seeded() {
        let pool = pool2d(&[[0.0, 0.0]; 20]);
        let a = score_random(&pool, 3);
        assert_eq!(a, score_random(&pool, 3));
        assert_ne!(a.scores, score_random(&pool, 4).scores);
        assert!(a.scores.iter().all(|&s| (0.0..1.0).contains(&s)));
    }

    #[test]
    fn proto_distance_matches_hand_computation() {
        let e = Embedder::Identity { dim: 2 };
        let support = vec![Sample { id: 100, features: vec![1.0, 2.0], label: 3 }];
        let pts = [[1.0, 2.0], [0.0, 0.0], [4.0, -2.0]];
        let s = score_proto_distance(&e, &support, &pool2d(&pts)).unwrap();
        for (p, &score) in pts.iter().zip(&s.scores) {
            let d2 = (p[0] - 1.0f64).powi(2) + (p[1] - 2.0f64).powi(2);
            assert_eq!(score, -d2);
        }
        assert_eq!(s.scores[0], 0.0);
        assert_eq!(s.rare_class, Some(3));
        assert!(score_proto_distance(&e, &[], &pool2d(&pts)).is_err());
    }

    #[test]
    fn proto_of_two_is_midpoint() {
        let e = Embedder::Identity { dim: 2 };
        let support = vec![Sample { id: 0, features: vec![0.0, 0.0], label: 1 }, Sample { id: 1, features: vec![2.0, 4.0], label: 1 }];
        let s = score_proto_distance(&e, &support, &pool2d(&[[1.0, 2.0]])).unwrap();
        assert_eq!(s.scores[0], 0.0);
    }

    #[test]
    fn scored_csv_format() {
        let mut buf = Vec::new();
        write_scored_csv(&mut buf, &scored(vec![0.5])).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,score,strategy,rare_class\n0,0.5,random,\n");
    }
}
