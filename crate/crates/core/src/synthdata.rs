//! Synthetic imbalanced datasets: isotropic Gaussian clusters, seeded
//! train/validation/pool splits, and replacement of a rare class's training
//! seed by an off-distribution ("synthetic") sample.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config, usage, Error, Result};
use crate::scalar::{positive, Scalar};
use crate::seeding::{derived_rng, rng_from_seed, stream};

pub type SampleId = u64;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: SampleId,
    pub features: Vec<T>,
    pub label: usize,
}

/// One Gaussian cluster `N(mean, stddev² I)` contributing `count` samples of `class_id`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSpec<T> {
    pub class_id: usize,
    pub mean: Vec<T>,
    pub stddev: T,
    pub count: usize,
}

impl<T: Scalar> ClusterSpec<T> {
    pub fn new(class_id: usize, mean: Vec<T>, stddev: T, count: usize) -> Self {
        Self { class_id, mean, stddev, count }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
    pub dim: usize,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        class_counts(&self.samples)
    }
}

pub(crate) fn class_counts<T>(samples: &[Sample<T>]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.label).or_insert(0) += 1;
    }
    counts
}

/// Draws every cluster in order. Ids are `0..n` in generation order.
pub fn generate_pool<T: Scalar>(specs: &[ClusterSpec<T>], seed: u64) -> Result<Dataset<T>> {
    let first = specs.first().ok_or_else(|| config("at least one cluster spec is required"))?;
    let dim = first.mean.len();
    if dim == 0 {
        return Err(config("cluster means must have at least one dimension"));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.mean.len() != dim {
            return Err(config(format!("cluster {i} (class {}) has dimension {}, expected {dim}", s.class_id, s.mean.len())));
        }
        if !positive(s.stddev) {
            return Err(config(format!("cluster {i} (class {}) needs stddev > 0", s.class_id)));
        }
        if s.mean.iter().any(|m| !m.is_finite()) {
            return Err(config(format!("cluster {i} (class {}) has a non-finite mean", s.class_id)));
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::with_capacity(specs.iter().map(|s| s.count).sum());
    let mut next_id: SampleId = 0;
    for spec in specs {
        for _ in 0..spec.count {
            let features = spec
                .mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.stddev * T::of(z)
                })
                .collect();
            samples.push(Sample { id: next_id, features, label: spec.class_id });
            next_id += 1;
        }
    }
    let num_classes = specs.iter().map(|s| s.class_id + 1).max().unwrap_or(0);
    Ok(Dataset { samples, dim, num_classes })
}

/// Train/validation/pool fractions for one common class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub pool: f64,
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, pool: f64) -> Self {
        Self { train, validation, pool }
    }

    /// Checks that every fraction lies in `[0, 1]` and that they sum to 1;
    /// `class` only labels the error message.
    pub fn validate(&self, class: Option<usize>) -> Result<()> {
        let parts = [self.train, self.validation, self.pool];
        let who = class.map_or("default".to_string(), |c| format!("class {c}"));
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(config(format!("split fractions for {who} must lie in [0, 1]")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config(format!("split fractions for {who} must sum to 1")));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self::new(0.4, 0.1, 0.5)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub rare_classes: BTreeSet<usize>,
    pub train_per_rare: usize,
    /// Validation samples per rare class. Two by default; three is equally plausible.
    pub val_per_rare: usize,
    pub common_fractions: SplitFractions,
    /// Per-class overrides of `common_fractions`.
    pub class_fractions: BTreeMap<usize, SplitFractions>,
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(rare_classes: impl IntoIterator<Item = usize>, seed: u64) -> Self {
        Self {
            rare_classes: rare_classes.into_iter().collect(),
            train_per_rare: 1,
            val_per_rare: 2,
            common_fractions: SplitFractions::default(),
            class_fractions: BTreeMap::new(),
            seed,
        }
    }

    fn fractions_for(&self, class: usize) -> SplitFractions {
        self.class_fractions.get(&class).copied().unwrap_or(self.common_fractions)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Pool,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Pool => "pool",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Validation),
            "pool" => Some(Split::Pool),
            _ => None,
        }
    }
}

/// The disjoint train/validation/pool partition the active loop mutates.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitBundle<T> {
    pub train: Vec<Sample<T>>,
    pub validation: Vec<Sample<T>>,
    pub pool: Vec<Sample<T>>,
    pub rare_classes: BTreeSet<usize>,
    pub dim: usize,
    pub num_classes: usize,
}

impl<T: Scalar> SplitBundle<T> {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(id, split)` for every sample, ordered by id.
    pub fn membership(&self) -> Vec<(SampleId, Split)> {
        let mut m: Vec<_> = self
            .train
            .iter()
            .map(|s| (s.id, Split::Train))
            .chain(self.validation.iter().map(|s| (s.id, Split::Validation)))
            .chain(self.pool.iter().map(|s| (s.id, Split::Pool)))
            .collect();
        m.sort_unstable();
        m
    }

    pub fn train_count(&self, class: usize) -> usize {
        self.train.iter().filter(|s| s.label == class).count()
    }

    pub fn pool_count(&self, class: usize) -> usize {
        self.pool.iter().filter(|s| s.label == class).count()
    }

    /// Checks id-disjointness of the three splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.len());
        for s in self.train.iter().chain(&self.validation).chain(&self.pool) {
            if !seen.insert(s.id) {
                return Err(usage(format!("sample {} appears in more than one split", s.id)));
            }
        }
        Ok(())
    }

    /// All samples of `class`, in any split.
    pub fn class_samples(&self, class: usize) -> impl Iterator<Item = &Sample<T>> {
        self.train.iter().chain(&self.validation).chain(&self.pool).filter(move |s| s.label == class)
    }

    fn next_free_id(&self) -> SampleId {
        self.train.iter().chain(&self.validation).chain(&self.pool).map(|s| s.id + 1).max().unwrap_or(0)
    }
}

pub fn split_dataset<T: Scalar>(dataset: &Dataset<T>, cfg: &SplitConfig) -> Result<SplitBundle<T>> {
    if cfg.train_per_rare < 1 {
        return Err(config("train_per_rare must be at least 1"));
    }
    cfg.common_fractions.validate(None)?;
    for (c, f) in &cfg.class_fractions {
        f.validate(Some(*c))?;
    }

    let mut by_class: BTreeMap<usize, Vec<&Sample<T>>> = BTreeMap::new();
    for s in &dataset.samples {
        by_class.entry(s.label).or_default().push(s);
    }
    for &rare in &cfg.rare_classes {
        let have = by_class.get(&rare).map_or(0, Vec::len);
        let need = cfg.train_per_rare + cfg.val_per_rare;
        if have < need {
            return Err(config(format!(
                "rare class {rare} has {have} samples, needs at least {need} \
                 (train_per_rare + val_per_rare)"
            )));
        }
    }

    let mut rng = rng_from_seed(cfg.seed);
    let (mut train, mut validation, mut pool) = (Vec::new(), Vec::new(), Vec::new());
    for (&class, members) in &by_class {
        let mut members: Vec<&Sample<T>> = members.clone();
        members.shuffle(&mut rng);
        let n = members.len();
        let (n_train, n_val) = if cfg.rare_classes.contains(&class) {
            (cfg.train_per_rare, cfg.val_per_rare)
        } else {
            let f = cfg.fractions_for(class);
            let n_train = ((n as f64) * f.train).round() as usize;
            let n_val = (((n as f64) * f.validation).round() as usize).min(n - n_train.min(n));
            (n_train.min(n), n_val)
        };
        for (i, s) in members.into_iter().enumerate() {
            let dest = if i < n_train {
                &mut train
            } else if i < n_train + n_val {
                &mut validation
            } else {
                &mut pool
            };
            dest.push(s.clone());
        }
    }
    for v in [&mut train, &mut validation, &mut pool] {
        v.sort_by_key(|s| s.id);
    }
    let bundle =
        SplitBundle { train, validation, pool, rare_classes: cfg.rare_classes.clone(), dim: dataset.dim, num_classes: dataset.num_classes };
    bundle.check_disjoint()?;
    Ok(bundle)
}

/// Replaces the training sample(s) of a rare class by fresh draws from
/// `N(class mean + offset, (class stddev · scale)² I)`.
///
/// The class mean and isotropic stddev are estimated from every sample of
/// the class in the bundle. Replacement samples get new ids above every
/// existing id.
pub fn inject_synthetic_seed<T: Scalar>(
    bundle: &SplitBundle<T>,
    class_id: usize,
    offset: &[T],
    scale: T,
    seed: u64,
) -> Result<SplitBundle<T>> {
    if !bundle.rare_classes.contains(&class_id) {
        return Err(usage(format!("class {class_id} is not a rare class of this bundle")));
    }
    if offset.len() != bundle.dim {
        return Err(usage(format!("offset has length {}, bundle dimension is {}", offset.len(), bundle.dim)));
    }
    if !positive(scale) {
        return Err(usage("synthetic seed scale must be positive"));
    }
    let (mean, stddev) = class_moments(bundle, class_id)?;
    let centre: Vec<T> = mean.iter().zip(offset).map(|(&m, &o)| m + o).collect();
    let spread = stddev * scale;

    let mut rng = derived_rng(seed, &[stream::SYNTHETIC_SEED, class_id as u64]);
    let first_id = bundle.next_free_id();
    let mut out = bundle.clone();
    for (s, id) in out.train.iter_mut().filter(|s| s.label == class_id).zip(first_id..) {
        s.id = id;
        s.features = centre
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + spread * T::of(z)
            })
            .collect();
    }
    Ok(out)
}

fn class_moments<T: Scalar>(bundle: &SplitBundle<T>, class_id: usize) -> Result<(Vec<T>, T)> {
    let members: Vec<&Sample<T>> = bundle.class_samples(class_id).collect();
    if members.len() < 2 {
        return Err(usage(format!("class {class_id} needs at least two samples to estimate its spread")));
    }
    let n = T::of_usize(members.len());
    let mut mean = vec![T::zero(); bundle.dim];
    for s in &members {
        for (m, &x) in mean.iter_mut().zip(&s.features) {
            *m = *m + x;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut ss = T::zero();
    for s in &members {
        for (&m, &x) in mean.iter().zip(&s.features) {
            ss = ss + (x - m) * (x - m);
        }
    }
    let var = ss / (T::of_usize(bundle.dim) * (n - T::one()));
    Ok((mean, var.sqrt()))
}

// --- CSV interchange -------------------------------------------------------

/// Writes `id,label,f0,...,f{d-1}`.
pub fn write_dataset_csv<T: Scalar, W: Write>(mut w: W, samples: &[Sample<T>], dim: usize) -> Result<()> {
    write!(w, "id,label")?;
    for j in 0..dim {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for s in samples {
        write!(w, "{},{}", s.id, s.label)?;
        for x in &s.features {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn csv_reader<R: BufRead>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        return Error::Io(std::io::Error::other(e));
    }
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, msg: e.to_string() }
}

pub fn read_dataset_csv<T: Scalar, R: BufRead>(r: R) -> Result<Dataset<T>> {
    let mut reader = csv_reader(r);
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::Parse { line: 1, msg: "header must start with id,label,f0".into() });
    }
    for (j, c) in header.iter().skip(2).enumerate() {
        if c != format!("f{j}") {
            return Err(Error::Parse { line: 1, msg: format!("expected column f{j}, found {c}") });
        }
    }
    let dim = header.len() - 2;
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let lineno = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        let id: SampleId = record[0].parse().map_err(|_| parse_err(format!("bad id {:?}", &record[0])))?;
        let label: usize = record[1].parse().map_err(|_| parse_err(format!("bad label {:?}", &record[1])))?;
        let features = record
            .iter()
            .skip(2)
            .map(|f| f.parse::<T>().map_err(|_| parse_err(format!("bad feature {f:?}"))))
            .collect::<Result<Vec<T>>>()?;
        if !ids.insert(id) {
            return Err(parse_err(format!("duplicate id {id}")));
        }
        samples.push(Sample { id, features, label });
    }
    let num_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    Ok(Dataset { samples, dim, num_classes })
}

/// Writes `id,split` ordered by id.
pub fn write_split_csv<T: Scalar, W: Write>(mut w: W, bundle: &SplitBundle<T>) -> Result<()> {
    writeln!(w, "id,split")?;
    for (id, split) in bundle.membership() {
        writeln!(w, "{id},{}", split.as_str())?;
    }
    Ok(())
}

pub fn read_split_csv<R: BufRead>(r: R) -> Result<BTreeMap<SampleId, Split>> {
    let mut reader = csv_reader(r);
    if reader.headers().map_err(csv_error)? != vec!["id", "split"] {
        return Err(Error::Parse { line: 1, msg: "header must be id,split".into() });
    }
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let id: SampleId = record[0].parse().map_err(|_| Error::Parse { line, msg: format!("bad id {:?}", &record[0]) })?;
        let split = Split::parse(&record[1]).ok_or_else(|| Error::Parse { line, msg: format!("unknown split {:?}", &record[1]) })?;
        out.insert(id, split);
    }
    Ok(out)
}

/// Rebuilds a bundle from a dataset and an `id,split` membership table.
pub fn bundle_from_membership<T: Scalar>(
    dataset: &Dataset<T>,
    membership: &BTreeMap<SampleId, Split>,
    rare_classes: BTreeSet<usize>,
) -> Result<SplitBundle<T>> {
    let mut bundle = SplitBundle {
        train: Vec::new(),
        validation: Vec::new(),
        pool: Vec::new(),
        rare_classes,
        dim: dataset.dim,
        num_classes: dataset.num_classes,
    };
    for s in &dataset.samples {
        match membership.get(&s.id) {
            Some(Split::Train) => bundle.train.push(s.clone()),
            Some(Split::Validation) => bundle.validation.push(s.clone()),
            Some(Split::Pool) => bundle.pool.push(s.clone()),
            None => return Err(config(format!("sample {} has no split assignment", s.id))),
        }
    }
    Ok(bundle)
}
