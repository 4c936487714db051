//! Embedder + linear softmax head, trained with cross-entropy and ADAM.
//!
//! The classifier computes `z = embed(x)` and
//! `P_i = exp(W_i·z + b_i) / Σ_j exp(W_j·z + b_j)`.

mod adam;
pub mod checkpoint;
mod train;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{numeric, usage, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, Scalar};
use crate::seeding::Rng;

pub use adam::{adam_step, AdamState};
pub use train::{batch_loss_and_grads, fit, grad_check, LossAndGrads, TrainConfig};

/// Anything that exposes its trainable tensors in a fixed order.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Fully connected layer followed by a rectifier.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer<T> {
    /// `hidden × input`
    pub weights: Matrix<T>,
    pub biases: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Embedder<T> {
    Identity { dim: usize },
    OneHidden(HiddenLayer<T>),
}

/// Embedder shape, used to build freshly initialized models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Identity,
    OneHidden { hidden: usize },
}

pub(crate) fn normal_vec<T: Scalar>(n: usize, stddev: T, rng: &mut Rng) -> Vec<T> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            stddev * T::of(z)
        })
        .collect()
}

impl<T: Scalar> Embedder<T> {
    pub fn init(arch: Architecture, input_dim: usize, init_scale: T, rng: &mut Rng) -> Self {
        match arch {
            Architecture::Identity => Embedder::Identity { dim: input_dim },
            Architecture::OneHidden { hidden } => Embedder::OneHidden(HiddenLayer {
                weights: Matrix::from_vec(hidden, input_dim, normal_vec(hidden * input_dim, init_scale, rng)),
                biases: vec![T::zero(); hidden],
            }),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Embedder::Identity { .. } => Architecture::Identity,
            Embedder::OneHidden(l) => Architecture::OneHidden { hidden: l.biases.len() },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Embedder::Identity { dim } => *dim,
            Embedder::OneHidden(l) => l.weights.cols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Embedder::Identity { dim } => *dim,
            Embedder::OneHidden(l) => l.weights.rows(),
        }
    }

    pub fn embed(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(usage(format!("input has dimension {}, embedder expects {}", x.len(), self.input_dim())));
        }
        Ok(self.embed_unchecked(x))
    }

    pub(crate) fn embed_unchecked(&self, x: &[T]) -> Vec<T> {
        match self {
            Embedder::Identity { .. } => x.to_vec(),
            Embedder::OneHidden(l) => {
                let mut z = l.weights.mul_vec(x);
                for (zi, &bi) in z.iter_mut().zip(&l.biases) {
                    *zi = (*zi + bi).max(T::zero());
                }
                z
            }
        }
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the embedding `z = embed(x)` is `dz`.
    pub(crate) fn backward(&self, x: &[T], z: &[T], dz: &[T], grads: &mut Embedder<T>) {
        if let (Embedder::OneHidden(_), Embedder::OneHidden(g)) = (self, grads) {
            // z > 0 exactly where the rectifier is active
            let da: Vec<T> = z.iter().zip(dz).map(|(&zi, &d)| if zi > T::zero() { d } else { T::zero() }).collect();
            g.weights.add_outer(T::one(), &da, x);
            for (gb, &d) in g.biases.iter_mut().zip(&da) {
                *gb = *gb + d;
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Embedder::Identity { dim } => Embedder::Identity { dim: *dim },
            Embedder::OneHidden(l) => Embedder::OneHidden(HiddenLayer {
                weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                biases: vec![T::zero(); l.biases.len()],
            }),
        }
    }
}

impl<T: Scalar> Parameters<T> for Embedder<T> {
    fn tensors(&self) -> Vec<&[T]> {
        match self {
            Embedder::Identity { .. } => Vec::new(),
            Embedder::OneHidden(l) => vec![l.weights.as_slice(), &l.biases],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Embedder::Identity { .. } => Vec::new(),
            Embedder::OneHidden(l) => vec![l.weights.as_mut_slice(), &mut l.biases],
        }
    }
}

/// Output layer: row `i` of `weights` and `biases[i]` produce the logit of class `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead<T> {
    pub weights: Matrix<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> LinearHead<T> {
    pub fn zeros(num_classes: usize, input_dim: usize) -> Self {
        Self { weights: Matrix::zeros(num_classes, input_dim), biases: vec![T::zero(); num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn logits(&self, z: &[T]) -> Vec<T> {
        (0..self.num_classes()).map(|i| dot(self.weights.row(i), z) + self.biases[i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T> {
    pub embedder: Embedder<T>,
    pub head: LinearHead<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(embedder: Embedder<T>, head: LinearHead<T>) -> Result<Self> {
        if embedder.output_dim() != head.weights.cols() {
            return Err(usage(format!("embedder outputs {} features, head expects {}", embedder.output_dim(), head.weights.cols())));
        }
        if head.weights.rows() != head.biases.len() {
            return Err(usage("head weight rows and biases disagree"));
        }
        Ok(Self { embedder, head })
    }

    /// Weights i.i.d. `N(0, init_scale²)`, biases zero, drawn from `rng`.
    pub fn init(arch: Architecture, input_dim: usize, num_classes: usize, init_scale: T, rng: &mut Rng) -> Self {
        let embedder = Embedder::init(arch, input_dim, init_scale, rng);
        let e = embedder.output_dim();
        let head = LinearHead {
            weights: Matrix::from_vec(num_classes, e, normal_vec(num_classes * e, init_scale, rng)),
            biases: vec![T::zero(); num_classes],
        };
        Self { embedder, head }
    }

    pub fn input_dim(&self) -> usize {
        self.embedder.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn zeros_like(&self) -> Self {
        Self { embedder: self.embedder.zeros_like(), head: LinearHead::zeros(self.head.weights.rows(), self.head.weights.cols()) }
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        let z = self.embedder.embed(x)?;
        Ok(self.head.logits(&z))
    }

    /// Index of the largest probability; ties go to the lowest class id.
    pub fn predict(&self, x: &[T]) -> Result<usize> {
        let logits = self.logits(x)?;
        Ok(argmax(&logits))
    }
}

impl<T: Scalar> Parameters<T> for Classifier<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut v = self.embedder.tensors();
        v.push(self.head.weights.as_slice());
        v.push(&self.head.biases);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.embedder.tensors_mut();
        v.push(self.head.weights.as_mut_slice());
        v.push(&mut self.head.biases);
        v
    }
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Turns logits into probabilities in place, subtracting the maximum logit first.
pub(crate) fn softmax_in_place<T: Scalar>(v: &mut [T]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(numeric("non-finite logit"));
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in v.iter_mut() {
        *x = *x / sum;
    }
    Ok(())
}

/// Class probabilities for one input.
pub fn softmax_probs<T: Scalar>(classifier: &Classifier<T>, x: &[T]) -> Result<Vec<T>> {
    let mut p = classifier.logits(x)?;
    softmax_in_place(&mut p)?;
    Ok(p)
}
