use std::borrow::Borrow;

use rand::seq::SliceRandom;

use crate::error::{config, usage, Result};
use crate::scalar::{positive, Scalar};
use crate::seeding::{derived_rng, stream};
use crate::synthdata::Sample;

use super::{adam_step, softmax_in_place, AdamState, Architecture, Classifier, Parameters};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub learning_rate: T,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    /// Stddev of the normal weight initialization.
    pub init_scale: T,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::of(1e-3),
            batch_size: 32,
            epochs: 200,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            init_scale: T::of(0.1),
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let (zero, one) = (T::zero(), T::one());
        if !positive(self.learning_rate) {
            return Err(config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be positive"));
        }
        if !(self.beta1 > zero && self.beta1 < one && self.beta2 > zero && self.beta2 < one) {
            return Err(config("beta1 and beta2 must lie in (0, 1)"));
        }
        if !positive(self.epsilon) {
            return Err(config("epsilon must be positive"));
        }
        if !positive(self.init_scale) {
            return Err(config("init_scale must be positive"));
        }
        Ok(())
    }

    /// A freshly initialized classifier drawn from this config's seed.
    pub fn init_classifier(&self, arch: Architecture, input_dim: usize, num_classes: usize) -> Classifier<T> {
        let mut rng = derived_rng(self.seed, &[stream::INIT]);
        Classifier::init(arch, input_dim, num_classes, self.init_scale, &mut rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossAndGrads<T> {
    pub loss: T,
    pub grads: Classifier<T>,
}

/// Mean cross-entropy over the batch and its gradient with respect to every
/// classifier parameter.
pub fn batch_loss_and_grads<T: Scalar, S: Borrow<Sample<T>>>(classifier: &Classifier<T>, batch: &[S]) -> Result<LossAndGrads<T>> {
    if batch.is_empty() {
        return Err(usage("batch is empty"));
    }
    let k = classifier.num_classes();
    let d = classifier.input_dim();
    let inv_n = T::one() / T::of_usize(batch.len());
    let mut grads = classifier.zeros_like();
    let mut loss = T::zero();
    let hidden = !matches!(classifier.embedder, super::Embedder::Identity { .. });

    for s in batch {
        let s = s.borrow();
        if s.label >= k {
            return Err(usage(format!("label {} outside [0, {k})", s.label)));
        }
        if s.features.len() != d {
            return Err(usage(format!("sample {} has dimension {}, expected {d}", s.id, s.features.len())));
        }
        let z = classifier.embedder.embed_unchecked(&s.features);
        let logits = classifier.head.logits(&z);
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
        loss = loss + (lse - logits[s.label]);

        let mut dlogits = logits;
        softmax_in_place(&mut dlogits)?;
        dlogits[s.label] = dlogits[s.label] - T::one();
        dlogits.iter_mut().for_each(|g| *g = *g * inv_n);

        grads.head.weights.add_outer(T::one(), &dlogits, &z);
        for (gb, &g) in grads.head.biases.iter_mut().zip(&dlogits) {
            *gb = *gb + g;
        }
        if hidden {
            let dz = classifier.head.weights.mul_vec_transposed(&dlogits);
            classifier.embedder.backward(&s.features, &z, &dz, &mut grads.embedder);
        }
    }
    Ok(LossAndGrads { loss: loss * inv_n, grads })
}

/// Minibatch ADAM on shuffled data for `cfg.epochs` epochs, starting from
/// `classifier` as given. Returns the trained classifier and the mean
/// training loss of every epoch.
pub fn fit<T: Scalar>(mut classifier: Classifier<T>, train: &[Sample<T>], cfg: &TrainConfig<T>) -> Result<(Classifier<T>, Vec<T>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(usage("training set is empty"));
    }
    let k = classifier.num_classes();
    if let Some(bad) = train.iter().find(|s| s.label >= k) {
        return Err(usage(format!("sample {} has label {} outside [0, {k})", bad.id, bad.label)));
    }

    let mut rng = derived_rng(cfg.seed, &[stream::SHUFFLE]);
    let mut state = AdamState::new(&classifier);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &train[i]).collect();
            let LossAndGrads { loss, grads } = batch_loss_and_grads(&classifier, &batch)?;
            epoch_loss = epoch_loss + loss * T::of_usize(chunk.len());
            adam_step(&mut classifier, &grads, &mut state, cfg)?;
        }
        history.push(epoch_loss / T::of_usize(train.len()));
    }
    Ok((classifier, history))
}

/// Largest relative disagreement between analytic gradients and central
/// finite differences over every parameter. The denominator is
/// `max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<T: Scalar, S: Borrow<Sample<T>>>(classifier: &Classifier<T>, batch: &[S], step: T) -> Result<T> {
    if !(step > T::zero() && step <= T::of(1e-2)) {
        return Err(usage("finite-difference step must lie in (0, 1e-2]"));
    }
    let analytic = batch_loss_and_grads(classifier, batch)?.grads;
    let analytic: Vec<T> = analytic.tensors().into_iter().flatten().copied().collect();

    let mut probe = classifier.clone();
    let floor = T::of(1e-12);
    let two = T::of(2.0);
    let mut worst = T::zero();
    let mut flat = 0;
    let n_tensors = probe.tensors().len();
    for t in 0..n_tensors {
        let len = probe.tensors()[t].len();
        for i in 0..len {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + step;
            let plus = batch_loss_and_grads(&probe, batch)?.loss;
            probe.tensors_mut()[t][i] = orig - step;
            let minus = batch_loss_and_grads(&probe, batch)?.loss;
            probe.tensors_mut()[t][i] = orig;
            let numeric = (plus - minus) / (two * step);
            let a = analytic[flat];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
            flat += 1;
        }
    }
    Ok(worst)
}
