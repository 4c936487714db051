//! Ready-made dataset definitions shared by the tests, the acceptance suite
//! and the command-line presets.

use rand_distr::{Distribution, StandardNormal};

use crate::active_loop::{FewShotConfig, LoopConfig};
use crate::error::Result;
use crate::fewshot::EpisodeConfig;
use crate::netcore::TrainConfig;
use crate::scalar::Scalar;
use crate::seeding::derived_rng;
use crate::strategies::StrategyKind;
use crate::synthdata::{generate_pool, split_dataset, ClusterSpec, SplitBundle, SplitConfig, SplitFractions};

/// Two common clusters at `(−1, ±1)` and a rare cluster at the origin, all
/// with stddev 0.5. The rare class gets one training sample, two
/// validation samples and `rare_pool` pool samples; common classes are
/// split evenly between train and pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub common_count: usize,
    pub rare_pool: usize,
    pub seed: u64,
}

impl ToyModel {
    pub const RARE_CLASS: usize = 2;

    pub fn new(seed: u64) -> Self {
        Self { common_count: 500, rare_pool: 10, seed }
    }

    pub fn specs<T: Scalar>(&self) -> Vec<ClusterSpec<T>> {
        let s = T::of(0.5);
        vec![
            ClusterSpec::new(0, vec![T::of(-1.0), T::of(1.0)], s, self.common_count),
            ClusterSpec::new(1, vec![T::of(-1.0), T::of(-1.0)], s, self.common_count),
            ClusterSpec::new(Self::RARE_CLASS, vec![T::zero(), T::zero()], s, self.rare_pool + 3),
        ]
    }

    pub fn split_config(&self) -> SplitConfig {
        let mut cfg = SplitConfig::new([Self::RARE_CLASS], self.seed);
        cfg.common_fractions = SplitFractions::new(0.5, 0.0, 0.5);
        cfg
    }

    pub fn bundle<T: Scalar>(&self) -> Result<SplitBundle<T>> {
        let ds = generate_pool(&self.specs::<T>(), self.seed)?;
        split_dataset(&ds, &self.split_config())
    }
}

/// Higher-dimensional benchmark with several rare classes.
///
/// Classes `0..common_classes` are common and come in groups of
/// `group_size` whose means sit within `group_gap` of a shared random centre
/// at distance `radius` from the origin, so the pool holds many ambiguous
/// common samples. The next `rare_classes` ids are rare: each mean sits at
/// the same radius, tilted away from its own coordinate axis by `rare_tilt`.
/// When `host_offset` is set, every rare class also gets a neighbouring
/// common "host" class (ids after the rare ones), rotated sideways by that
/// amount, so rare samples look like confident members of the host.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskBenchmark {
    pub dim: usize,
    pub common_classes: usize,
    pub common_count: usize,
    pub rare_classes: usize,
    pub rare_pool: usize,
    pub val_per_rare: usize,
    pub radius: f64,
    pub group_size: usize,
    pub group_gap: f64,
    pub rare_tilt: f64,
    pub stddev: f64,
    pub rare_stddev: f64,
    pub host_offset: Option<f64>,
    pub seed: u64,
}

impl DeskBenchmark {
    pub fn new(seed: u64) -> Self {
        Self {
            dim: 16,
            common_classes: 8,
            common_count: 300,
            rare_classes: 5,
            rare_pool: 50,
            val_per_rare: 2,
            radius: 8.0,
            group_size: 4,
            group_gap: 0.5,
            rare_tilt: 0.5,
            stddev: 1.0,
            rare_stddev: 0.5,
            host_offset: Some(1.2),
            seed,
        }
    }

    /// Common class sharing a direction with the `i`-th rare class.
    pub fn host_class(&self, i: usize) -> usize {
        self.common_classes + self.rare_classes + i
    }

    pub fn rare_ids(&self) -> std::ops::Range<usize> {
        self.common_classes..self.common_classes + self.rare_classes
    }

    /// Loop settings used with this benchmark: fewer epochs than the
    /// library default, and a short episodic schedule for the few-shot
    /// strategies.
    pub fn loop_config<T: Scalar>(&self, strategy: StrategyKind) -> LoopConfig<T> {
        LoopConfig {
            strategy,
            train: TrainConfig { epochs: 100, ..TrainConfig::default() },
            few_shot: Some(FewShotConfig {
                episode: EpisodeConfig { episodes: 500, ..EpisodeConfig::default() },
                optim: TrainConfig { learning_rate: T::of(1e-2), ..TrainConfig::default() },
                ..FewShotConfig::default()
            }),
            base_seed: self.seed.wrapping_mul(100),
            ..LoopConfig::default()
        }
    }

    pub fn specs<T: Scalar>(&self) -> Vec<ClusterSpec<T>> {
        let mut rng = derived_rng(self.seed, &[0xD35C]);
        let direction = |rng: &mut crate::seeding::Rng| {
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
        };
        let mut specs = Vec::new();
        let sd = T::of(self.stddev);
        let mut class = 0;
        while class < self.common_classes {
            let centre = direction(&mut rng);
            for _ in 0..self.group_size.min(self.common_classes - class) {
                let offset = direction(&mut rng);
                let mean = centre.iter().zip(&offset).map(|(&c, &u)| T::of(self.radius * c + 0.5 * self.group_gap * u)).collect();
                specs.push(ClusterSpec::new(class, mean, sd, self.common_count));
                class += 1;
            }
        }
        for (i, r) in self.rare_ids().enumerate() {
            // Each rare mean leans towards its own coordinate axis, so the
            // dominant component of its direction is positive and unambiguous.
            let tilt = direction(&mut rng);
            let mut dir: Vec<f64> = tilt.iter().map(|&u| self.rare_tilt * u).collect();
            dir[i % self.dim] += 1.0;
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            let at = |radius: f64| dir.iter().map(|&x| T::of(radius * x / norm)).collect::<Vec<T>>();
            specs.push(ClusterSpec::new(r, at(self.radius), T::of(self.rare_stddev), 1 + self.val_per_rare + self.rare_pool));
            if let Some(h) = self.host_offset {
                // Host mean: rotate the rare direction sideways by `h` along a
                // random orthogonal direction, keeping the same radius.
                let u = direction(&mut rng);
                let along: f64 = u.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / (norm * norm);
                let perp: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - along * b).collect();
                let pn = perp.iter().map(|x| x * x).sum::<f64>().sqrt();
                let host: Vec<f64> = dir.iter().zip(&perp).map(|(d, p)| d / norm + h * p / pn).collect();
                let hn = host.iter().map(|x| x * x).sum::<f64>().sqrt();
                let mean = host.iter().map(|x| T::of(self.radius * x / hn)).collect();
                specs.push(ClusterSpec::new(self.host_class(i), mean, sd, self.common_count));
            }
        }
        specs
    }

    pub fn split_config(&self) -> SplitConfig {
        let mut cfg = SplitConfig::new(self.rare_ids(), self.seed);
        cfg.val_per_rare = self.val_per_rare;
        cfg
    }

    pub fn bundle<T: Scalar>(&self) -> Result<SplitBundle<T>> {
        let ds = generate_pool(&self.specs::<T>(), self.seed)?;
        split_dataset(&ds, &self.split_config())
    }
}
