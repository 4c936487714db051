//! Episodic training for prototype-distance and relation-similarity models.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::index;

use crate::error::{config, usage, Error, Result};
use crate::linalg::Matrix;
use crate::netcore::checkpoint::{parse_sections, write_embedder, write_tensor};
use crate::netcore::{adam_step, normal_vec, softmax_in_place, AdamState, Embedder, HiddenLayer, Parameters, TrainConfig};
use crate::scalar::{dot, sq_dist, Scalar};
use crate::seeding::{derived_rng, stream, Rng};
use crate::synthdata::Sample;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    /// Classes per episode.
    pub way: usize,
    /// Support samples per class.
    pub shot: usize,
    /// Query samples per class.
    pub queries: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { way: 5, shot: 1, queries: 8, episodes: 2000, seed: 0 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 {
            return Err(config("episode way must be at least 2"));
        }
        if self.shot < 1 || self.queries < 1 {
            return Err(config("episode shot and queries must be at least 1"));
        }
        Ok(())
    }
}

/// A `way × shot` support set and `way × queries` query set. Labels inside
/// the episode are local (`0..way`); `classes[k]` is the dataset class of
/// local label `k`. Support is stored class-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode<T> {
    pub support: Vec<Sample<T>>,
    pub query: Vec<Sample<T>>,
    pub classes: Vec<usize>,
    pub shot: usize,
}

impl<T: Scalar> Episode<T> {
    pub fn way(&self) -> usize {
        self.classes.len()
    }
}

/// Draws classes and samples uniformly without replacement. Classes with
/// fewer than `shot + queries` samples are never drawn.
pub fn sample_episode<T: Scalar>(dataset: &[Sample<T>], cfg: &EpisodeConfig, rng: &mut Rng) -> Result<Episode<T>> {
    cfg.validate()?;
    let mut by_class: BTreeMap<usize, Vec<&Sample<T>>> = BTreeMap::new();
    for s in dataset {
        by_class.entry(s.label).or_default().push(s);
    }
    let need = cfg.shot + cfg.queries;
    let eligible: Vec<usize> = by_class.iter().filter(|(_, v)| v.len() >= need).map(|(&c, _)| c).collect();
    if eligible.len() < cfg.way {
        return Err(config(format!("only {} classes have at least {need} samples; episodes need {}", eligible.len(), cfg.way)));
    }
    let classes: Vec<usize> = index::sample(rng, eligible.len(), cfg.way).into_iter().map(|i| eligible[i]).collect();
    let mut support = Vec::with_capacity(cfg.way * cfg.shot);
    let mut query = Vec::with_capacity(cfg.way * cfg.queries);
    for (local, &class) in classes.iter().enumerate() {
        let members = &by_class[&class];
        let picks = index::sample(rng, members.len(), need);
        for (j, i) in picks.into_iter().enumerate() {
            let mut s = members[i].clone();
            s.label = local;
            if j < cfg.shot {
                support.push(s);
            } else {
                query.push(s);
            }
        }
    }
    Ok(Episode { support, query, classes, shot: cfg.shot })
}

/// Mean embedding of the support samples.
pub fn prototype<T: Scalar>(embedder: &Embedder<T>, support: &[Sample<T>]) -> Result<Vec<T>> {
    if support.is_empty() {
        return Err(usage("prototype needs at least one support sample"));
    }
    let mut acc = vec![T::zero(); embedder.output_dim()];
    for s in support {
        for (a, z) in acc.iter_mut().zip(embedder.embed(&s.features)?) {
            *a = *a + z;
        }
    }
    let n = T::of_usize(support.len());
    acc.iter_mut().for_each(|a| *a = *a / n);
    Ok(acc)
}

struct EmbeddedEpisode<T> {
    support: Vec<Vec<T>>,
    query: Vec<Vec<T>>,
    prototypes: Vec<Vec<T>>,
}

fn embed_episode<T: Scalar>(embedder: &Embedder<T>, ep: &Episode<T>) -> Result<EmbeddedEpisode<T>> {
    let support = ep.support.iter().map(|s| embedder.embed(&s.features)).collect::<Result<Vec<_>>>()?;
    let query = ep.query.iter().map(|s| embedder.embed(&s.features)).collect::<Result<Vec<_>>>()?;
    let e = embedder.output_dim();
    let inv_shot = T::one() / T::of_usize(ep.shot);
    let prototypes = support
        .chunks(ep.shot)
        .map(|group| {
            let mut c = vec![T::zero(); e];
            for z in group {
                for (ci, &zi) in c.iter_mut().zip(z) {
                    *ci = *ci + zi * inv_shot;
                }
            }
            c
        })
        .collect();
    Ok(EmbeddedEpisode { support, query, prototypes })
}

/// Pushes per-embedding gradients back through the embedder.
fn backprop_episode<T: Scalar>(
    embedder: &Embedder<T>,
    ep: &Episode<T>,
    emb: &EmbeddedEpisode<T>,
    d_query: &[Vec<T>],
    d_proto: &[Vec<T>],
    grads: &mut Embedder<T>,
) {
    let inv_shot = T::one() / T::of_usize(ep.shot);
    for (i, s) in ep.support.iter().enumerate() {
        let dz: Vec<T> = d_proto[i / ep.shot].iter().map(|&g| g * inv_shot).collect();
        embedder.backward(&s.features, &emb.support[i], &dz, grads);
    }
    for (i, s) in ep.query.iter().enumerate() {
        embedder.backward(&s.features, &emb.query[i], &d_query[i], grads);
    }
}

/// Cross-entropy of queries classified by softmax over negative squared
/// distances to the class prototypes, and its embedder gradient.
pub fn protonet_loss_and_grads<T: Scalar>(embedder: &Embedder<T>, ep: &Episode<T>) -> Result<(T, Embedder<T>)> {
    let emb = embed_episode(embedder, ep)?;
    let way = ep.way();
    let nq = ep.query.len();
    let inv_q = T::one() / T::of_usize(nq);
    let two = T::of(2.0);
    let e = embedder.output_dim();
    let mut loss = T::zero();
    let mut d_query = vec![vec![T::zero(); e]; nq];
    let mut d_proto = vec![vec![T::zero(); e]; way];
    for (i, q) in emb.query.iter().enumerate() {
        let y = ep.query[i].label;
        let mut p: Vec<T> = emb.prototypes.iter().map(|c| -sq_dist(q, c)).collect();
        let max = p.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + p.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
        loss = loss + lse - p[y];
        softmax_in_place(&mut p)?;
        for k in 0..way {
            let g = (p[k] - if k == y { T::one() } else { T::zero() }) * inv_q;
            if g == T::zero() {
                continue;
            }
            for j in 0..e {
                let diff = q[j] - emb.prototypes[k][j];
                d_query[i][j] = d_query[i][j] - two * g * diff;
                d_proto[k][j] = d_proto[k][j] + two * g * diff;
            }
        }
    }
    let mut grads = embedder.zeros_like();
    backprop_episode(embedder, ep, &emb, &d_query, &d_proto, &mut grads);
    Ok((loss * inv_q, grads))
}

/// Fraction of queries whose nearest prototype is their own class.
pub fn protonet_accuracy<T: Scalar>(embedder: &Embedder<T>, ep: &Episode<T>) -> Result<f64> {
    let emb = embed_episode(embedder, ep)?;
    let correct = emb
        .query
        .iter()
        .zip(&ep.query)
        .filter(|(q, s)| {
            let d: Vec<T> = emb.prototypes.iter().map(|c| -sq_dist(q, c)).collect();
            crate::netcore::argmax(&d) == s.label
        })
        .count();
    Ok(correct as f64 / ep.query.len() as f64)
}

/// Trains the embedder for `episode_cfg.episodes` episodes with ADAM.
/// Returns the embedder and the loss of every episode.
pub fn train_protonet<T: Scalar>(
    mut embedder: Embedder<T>,
    dataset: &[Sample<T>],
    episode_cfg: &EpisodeConfig,
    optim: &TrainConfig<T>,
) -> Result<(Embedder<T>, Vec<T>)> {
    episode_cfg.validate()?;
    optim.validate()?;
    let mut rng = derived_rng(episode_cfg.seed, &[stream::EPISODES]);
    let mut state = AdamState::new(&embedder);
    let mut losses = Vec::with_capacity(episode_cfg.episodes);
    for _ in 0..episode_cfg.episodes {
        let ep = sample_episode(dataset, episode_cfg, &mut rng)?;
        let (loss, grads) = protonet_loss_and_grads(&embedder, &ep)?;
        adam_step(&mut embedder, &grads, &mut state, optim)?;
        losses.push(loss);
    }
    Ok((embedder, losses))
}

/// Shared embedder plus a one-hidden-layer scorer over concatenated
/// `(prototype, query)` embeddings, squashed to `[0, 1]` by a logistic output.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationModel<T> {
    pub embedder: Embedder<T>,
    /// `hidden × 2e`
    pub hidden: HiddenLayer<T>,
    pub out_weights: Vec<T>,
    pub out_bias: [T; 1],
    trained: bool,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> RelationModel<T> {
    pub fn new(embedder: Embedder<T>, hidden: HiddenLayer<T>, out_weights: Vec<T>, out_bias: T, trained: bool) -> Result<Self> {
        let e = embedder.output_dim();
        if hidden.weights.cols() != 2 * e {
            return Err(usage(format!("relation head takes {} inputs, expected twice the embedding width {e}", hidden.weights.cols())));
        }
        if hidden.biases.len() != hidden.weights.rows() || out_weights.len() != hidden.weights.rows() {
            return Err(usage("relation head tensors disagree in width"));
        }
        Ok(Self { embedder, hidden, out_weights, out_bias: [out_bias], trained })
    }

    /// Head weights `N(0, init_scale²)`, biases zero.
    pub fn init(embedder: Embedder<T>, relation_hidden: usize, init_scale: T, rng: &mut Rng) -> Self {
        let inputs = 2 * embedder.output_dim();
        let hidden = HiddenLayer {
            weights: Matrix::from_vec(relation_hidden, inputs, normal_vec(relation_hidden * inputs, init_scale, rng)),
            biases: vec![T::zero(); relation_hidden],
        };
        let out_weights = normal_vec(relation_hidden, init_scale, rng);
        Self { embedder, hidden, out_weights, out_bias: [T::zero()], trained: false }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn concat(proto: &[T], query: &[T]) -> Vec<T> {
        let mut u = Vec::with_capacity(proto.len() + query.len());
        u.extend_from_slice(proto);
        u.extend_from_slice(query);
        u
    }

    fn hidden_activations(&self, u: &[T]) -> Vec<T> {
        let mut r = self.hidden.weights.mul_vec(u);
        for (ri, &b) in r.iter_mut().zip(&self.hidden.biases) {
            *ri = (*ri + b).max(T::zero());
        }
        r
    }

    /// Similarity in `[0, 1]` between two embeddings.
    pub fn relation(&self, proto: &[T], query: &[T]) -> T {
        let u = Self::concat(proto, query);
        let r = self.hidden_activations(&u);
        sigmoid(dot(&self.out_weights, &r) + self.out_bias[0])
    }

    fn zeros_like(&self) -> Self {
        Self {
            embedder: self.embedder.zeros_like(),
            hidden: HiddenLayer {
                weights: Matrix::zeros(self.hidden.weights.rows(), self.hidden.weights.cols()),
                biases: vec![T::zero(); self.hidden.biases.len()],
            },
            out_weights: vec![T::zero(); self.out_weights.len()],
            out_bias: [T::zero()],
            trained: false,
        }
    }
}

impl<T: Scalar> Parameters<T> for RelationModel<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut v = self.embedder.tensors();
        v.extend([self.hidden.weights.as_slice(), &self.hidden.biases, &self.out_weights, &self.out_bias[..]]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.embedder.tensors_mut();
        v.push(self.hidden.weights.as_mut_slice());
        v.push(&mut self.hidden.biases);
        v.push(&mut self.out_weights);
        v.push(&mut self.out_bias[..]);
        v
    }
}

/// Mean squared error of every `(prototype, query)` relation score against
/// a 1/0 same-class target, and its gradient.
pub fn relation_loss_and_grads<T: Scalar>(model: &RelationModel<T>, ep: &Episode<T>) -> Result<(T, RelationModel<T>)> {
    let emb = embed_episode(&model.embedder, ep)?;
    let way = ep.way();
    let e = model.embedder.output_dim();
    let pairs = way * ep.query.len();
    let inv_p = T::one() / T::of_usize(pairs);
    let two = T::of(2.0);
    let mut grads = model.zeros_like();
    let mut d_query = vec![vec![T::zero(); e]; ep.query.len()];
    let mut d_proto = vec![vec![T::zero(); e]; way];
    let mut loss = T::zero();
    for (k, c) in emb.prototypes.iter().enumerate() {
        for (i, q) in emb.query.iter().enumerate() {
            let target = if ep.query[i].label == k { T::one() } else { T::zero() };
            let u = RelationModel::concat(c, q);
            let r = model.hidden_activations(&u);
            let s = sigmoid(dot(&model.out_weights, &r) + model.out_bias[0]);
            loss = loss + (s - target) * (s - target);
            let g = two * (s - target) * inv_p * s * (T::one() - s);
            if g == T::zero() {
                continue;
            }
            for (gw, &ri) in grads.out_weights.iter_mut().zip(&r) {
                *gw = *gw + g * ri;
            }
            grads.out_bias[0] = grads.out_bias[0] + g;
            let da: Vec<T> = r.iter().zip(&model.out_weights).map(|(&ri, &w)| if ri > T::zero() { g * w } else { T::zero() }).collect();
            grads.hidden.weights.add_outer(T::one(), &da, &u);
            for (gb, &d) in grads.hidden.biases.iter_mut().zip(&da) {
                *gb = *gb + d;
            }
            let du = model.hidden.weights.mul_vec_transposed(&da);
            for j in 0..e {
                d_proto[k][j] = d_proto[k][j] + du[j];
                d_query[i][j] = d_query[i][j] + du[e + j];
            }
        }
    }
    backprop_episode(&model.embedder, ep, &emb, &d_query, &d_proto, &mut grads.embedder);
    Ok((loss * inv_p, grads))
}

/// Trains embedder and relation head jointly. The model is marked trained
/// once at least one episode has run.
pub fn train_relationnet<T: Scalar>(
    mut model: RelationModel<T>,
    dataset: &[Sample<T>],
    episode_cfg: &EpisodeConfig,
    optim: &TrainConfig<T>,
) -> Result<(RelationModel<T>, Vec<T>)> {
    episode_cfg.validate()?;
    optim.validate()?;
    let mut rng = derived_rng(episode_cfg.seed, &[stream::EPISODES]);
    let mut state = AdamState::new(&model);
    let mut losses = Vec::with_capacity(episode_cfg.episodes);
    for _ in 0..episode_cfg.episodes {
        let ep = sample_episode(dataset, episode_cfg, &mut rng)?;
        let (loss, grads) = relation_loss_and_grads(&model, &ep)?;
        adam_step(&mut model, &grads, &mut state, optim)?;
        losses.push(loss);
    }
    if episode_cfg.episodes > 0 {
        model.trained = true;
    }
    Ok((model, losses))
}

/// Writes a relation model: the embedder block, then
/// `relation.hidden.weights`, `relation.hidden.biases`,
/// `relation.out.weights` and `relation.out.bias`.
pub fn write_relation_model<T: Scalar, W: Write>(mut w: W, m: &RelationModel<T>) -> Result<()> {
    write_embedder(&mut w, "embedder", &m.embedder)?;
    let h = &m.hidden;
    write_tensor(&mut w, "relation.hidden.weights", h.weights.rows(), h.weights.cols(), h.weights.as_slice())?;
    write_tensor(&mut w, "relation.hidden.biases", 1, h.biases.len(), &h.biases)?;
    write_tensor(&mut w, "relation.out.weights", 1, m.out_weights.len(), &m.out_weights)?;
    write_tensor(&mut w, "relation.out.bias", 1, 1, &m.out_bias)?;
    Ok(())
}

/// Reads a model written by [`write_relation_model`]; it is treated as trained.
pub fn read_relation_model<T: Scalar, R: BufRead>(r: R) -> Result<RelationModel<T>> {
    let mut s = parse_sections(r)?;
    let embedder = s.embedder("embedder")?;
    let hw = s.take("relation.hidden.weights")?;
    let hb = s.take("relation.hidden.biases")?;
    let ow = s.take("relation.out.weights")?;
    let ob = s.take("relation.out.bias")?;
    if ob.values.len() != 1 {
        return Err(Error::Parse { line: 0, msg: "relation.out.bias must hold one value".into() });
    }
    RelationModel::new(
        embedder,
        HiddenLayer { weights: Matrix::from_vec(hw.rows, hw.cols, hw.values), biases: hb.values },
        ow.values,
        ob.values[0],
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Architecture;
    use crate::seeding::rng_from_seed;
    use crate::synthdata::{generate_pool, ClusterSpec};

    fn blobs(classes: usize, per_class: usize, sep: f64, seed: u64) -> Vec<Sample<f64>> {
        let specs: Vec<_> = (0..classes)
            .map(|c| {
                let angle = c as f64 * std::f64::consts::TAU / classes as f64;
                ClusterSpec::new(c, vec![sep * angle.cos(), sep * angle.sin()], 0.5, per_class)
            })
            .collect();
        generate_pool(&specs, seed).unwrap().samples
    }

    fn hidden_embedder(seed: u64) -> Embedder<f64> {
        Embedder::init(Architecture::OneHidden { hidden: 8 }, 2, 0.5, &mut rng_from_seed(seed))
    }

    /// Central differences over every tensor entry of `params`.
    fn fd_check<P: Parameters<f64> + Clone>(params: &P, analytic: &P, loss: impl Fn(&P) -> f64) -> f64 {
        let a: Vec<f64> = analytic.tensors().into_iter().flatten().copied().collect();
        let mut probe = params.clone();
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut flat = 0;
        for t in 0..probe.tensors().len() {
            for i in 0..probe.tensors()[t].len() {
                let orig = probe.tensors()[t][i];
                probe.tensors_mut()[t][i] = orig + h;
                let lp = loss(&probe);
                probe.tensors_mut()[t][i] = orig - h;
                let lm = loss(&probe);
                probe.tensors_mut()[t][i] = orig;
                let n = (lp - lm) / (2.0 * h);
                worst = worst.max((a[flat] - n).abs() / a[flat].abs().max(n.abs()).max(1e-12));
                flat += 1;
            }
        }
        worst
    }

    #[test]
    fn minimal_episode() {
        let data = blobs(2, 5, 3.0, 0);
        let cfg = EpisodeConfig { way: 2, shot: 1, queries: 1, episodes: 1, seed: 0 };
        let ep = sample_episode(&data, &cfg, &mut rng_from_seed(1)).unwrap();
        assert_eq!(ep.support.len(), 2);
        assert_eq!(ep.query.len(), 2);
        let mut ids: Vec<_> = ep.support.iter().chain(&ep.query).map(|s| s.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn episode_is_deterministic_per_rng_state() {
        let data = blobs(6, 20, 3.0, 0);
        let cfg = EpisodeConfig::default();
        let a = sample_episode(&data, &cfg, &mut rng_from_seed(5)).unwrap();
        let b = sample_episode(&data, &cfg, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.support.len(), 5);
        assert_eq!(a.query.len(), 40);
    }

    #[test]
    fn small_classes_are_excluded() {
        let mut data = blobs(3, 10, 3.0, 0);
        data.retain(|s| s.label != 2 || s.id % 10 < 3);
        let cfg = EpisodeConfig { way: 2, shot: 1, queries: 8, episodes: 1, seed: 0 };
        let mut rng = rng_from_seed(0);
        for _ in 0..20 {
            let ep = sample_episode(&data, &cfg, &mut rng).unwrap();
            assert!(!ep.classes.contains(&2));
        }
        let cfg3 = EpisodeConfig { way: 3, ..cfg };
        assert!(matches!(sample_episode(&data, &cfg3, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn prototype_of_single_shot_is_its_embedding() {
        let e = hidden_embedder(3);
        let s = blobs(1, 1, 1.0, 2);
        assert_eq!(prototype(&e, &s).unwrap(), e.embed(&s[0].features).unwrap());
        assert!(prototype(&e, &[]).is_err());
    }

    #[test]
    fn protonet_gradient_matches_finite_differences() {
        let data = blobs(4, 12, 1.5, 1);
        let cfg = EpisodeConfig { way: 3, shot: 2, queries: 3, episodes: 1, seed: 0 };
        let ep = sample_episode(&data, &cfg, &mut rng_from_seed(2)).unwrap();
        let e = hidden_embedder(4);
        let (_, g) = protonet_loss_and_grads(&e, &ep).unwrap();
        let err = fd_check(&e, &g, |p| protonet_loss_and_grads(p, &ep).unwrap().0);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn relation_gradient_matches_finite_differences() {
        let data = blobs(4, 12, 1.5, 1);
        let cfg = EpisodeConfig { way: 3, shot: 2, queries: 3, episodes: 1, seed: 0 };
        let ep = sample_episode(&data, &cfg, &mut rng_from_seed(3)).unwrap();
        let m = RelationModel::init(hidden_embedder(5), 6, 0.5, &mut rng_from_seed(6));
        let (_, g) = relation_loss_and_grads(&m, &ep).unwrap();
        let err = fd_check(&m, &g, |p| relation_loss_and_grads(p, &ep).unwrap().0);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_episodes_is_a_no_op() {
        let data = blobs(5, 12, 3.0, 0);
        let cfg = EpisodeConfig { episodes: 0, ..Default::default() };
        let e = hidden_embedder(0);
        let (out, losses) = train_protonet(e.clone(), &data, &cfg, &TrainConfig::default()).unwrap();
        assert_eq!(out, e);
        assert!(losses.is_empty());
        let m = RelationModel::init(e, 4, 0.1, &mut rng_from_seed(0));
        let (out, _) = train_relationnet(m.clone(), &data, &cfg, &TrainConfig::default()).unwrap();
        assert_eq!(out, m);
        assert!(!out.is_trained());
    }

    #[test]
    fn zeroed_head_scores_half_and_loss_quarter() {
        let data = blobs(5, 12, 3.0, 0);
        let mut m = RelationModel::init(hidden_embedder(1), 4, 0.3, &mut rng_from_seed(1));
        m.out_weights.iter_mut().for_each(|w| *w = 0.0);
        let ep = sample_episode(&data, &EpisodeConfig::default(), &mut rng_from_seed(0)).unwrap();
        let (loss, _) = relation_loss_and_grads(&m, &ep).unwrap();
        // every pair scores 0.5: (0.5 − 1)² = (0.5 − 0)² = 0.25 whatever the target mix
        assert_eq!(loss, 0.25);
        let z = m.embedder.embed(&[1.0, -1.0]).unwrap();
        assert_eq!(m.relation(&z, &z), 0.5);
    }

    #[test]
    fn protonet_learns_separated_classes() {
        let data = blobs(6, 30, 3.0, 7);
        let cfg = EpisodeConfig { way: 5, shot: 1, queries: 8, episodes: 300, seed: 1 };
        let optim = TrainConfig { learning_rate: 1e-2, ..Default::default() };
        let (e, losses) = train_protonet(hidden_embedder(2), &data, &cfg, &optim).unwrap();
        let early: f64 = losses[..50].iter().sum::<f64>() / 50.0;
        let late: f64 = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(late < early, "{early} -> {late}");
        let mut rng = rng_from_seed(99);
        let acc: f64 = (0..20).map(|_| protonet_accuracy(&e, &sample_episode(&data, &cfg, &mut rng).unwrap()).unwrap()).sum::<f64>() / 20.0;
        assert!(acc >= 0.9, "{acc}");
    }

    #[test]
    fn relation_scores_matched_pairs_higher() {
        let data = blobs(6, 30, 3.0, 8);
        let cfg = EpisodeConfig { way: 5, shot: 1, queries: 8, episodes: 400, seed: 2 };
        let optim = TrainConfig { learning_rate: 1e-2, ..Default::default() };
        let m = RelationModel::init(hidden_embedder(3), 16, 0.3, &mut rng_from_seed(3));
        let (m, _) = train_relationnet(m, &data, &cfg, &optim).unwrap();
        assert!(m.is_trained());
        let mut rng = rng_from_seed(77);
        let (mut matched, mut mismatched) = (Vec::new(), Vec::new());
        for _ in 0..10 {
            let ep = sample_episode(&data, &cfg, &mut rng).unwrap();
            let emb = embed_episode(&m.embedder, &ep).unwrap();
            for (k, c) in emb.prototypes.iter().enumerate() {
                for (i, q) in emb.query.iter().enumerate() {
                    let s = m.relation(c, q);
                    assert!((0.0..=1.0).contains(&s));
                    if ep.query[i].label == k {
                        matched.push(s)
                    } else {
                        mismatched.push(s)
                    }
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&matched) > mean(&mismatched));
    }

    #[test]
    fn relation_checkpoint_round_trip() {
        let m = RelationModel::init(hidden_embedder(1), 4, 0.3, &mut rng_from_seed(1));
        let mut buf = Vec::new();
        write_relation_model(&mut buf, &m).unwrap();
        let back: RelationModel<f64> = read_relation_model(&buf[..]).unwrap();
        assert_eq!(back.hidden, m.hidden);
        assert_eq!(back.embedder, m.embedder);
        assert_eq!(back.out_weights, m.out_weights);
        assert!(back.is_trained());
    }
}
