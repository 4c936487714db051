//! Experiment configuration: a TOML file with `[dataset]`, `[loop]`,
//! `[output]` and `[dissect]` sections.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::ops::Range;
use std::path::{Path, PathBuf};

use activesearch::active_loop::{FewShotConfig, LoopConfig};
use activesearch::benchmarks::{DeskBenchmark, ToyModel};
use activesearch::fewshot::EpisodeConfig;
use activesearch::netcore::{Architecture, TrainConfig};
use activesearch::strategies::StrategyKind;
use activesearch::synthdata::{
    bundle_from_membership, generate_pool, inject_synthetic_seed, read_dataset_csv, read_split_csv, split_dataset, SplitConfig,
    SplitFractions,
};
use activesearch::{ClusterSpec, SplitBundle};
use anyhow::{anyhow, Context, Result};
use serde::Deserialize;
use toml::Spanned;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ACTIVESEARCH_OUT";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(rename = "loop")]
    pub active: Option<Spanned<LoopSection>>,
    #[serde(default)]
    pub output: OutputSection,
    pub dissect: Option<Spanned<DissectSection>>,
    #[serde(skip)]
    source: Source,
}

#[derive(Debug, Default)]
struct Source {
    path: PathBuf,
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Seed for cluster sampling; also the split seed unless `split.seed` is given.
    pub seed: u64,
    /// `toy` or `desk`; mutually exclusive with `cluster` and `import`.
    pub preset: Option<Spanned<String>>,
    pub rare_classes: Option<Spanned<Vec<usize>>>,
    #[serde(default)]
    pub cluster: Vec<Spanned<ClusterSection>>,
    pub import: Option<Spanned<ImportSection>>,
    #[serde(default)]
    pub split: SplitSection,
    pub synthetic_seed: Option<Spanned<SyntheticSection>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub class: usize,
    pub mean: Vec<f64>,
    pub stddev: f64,
    pub count: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportSection {
    /// Dataset CSV (`id,label,f0,...`), relative to the config file.
    pub samples: PathBuf,
    /// Optional membership CSV (`id,split`); otherwise the split settings apply.
    pub split: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub seed: Option<u64>,
    pub train_per_rare: Option<usize>,
    pub val_per_rare: Option<usize>,
    pub common_fractions: Option<Spanned<[f64; 3]>>,
    #[serde(default)]
    pub class_fractions: BTreeMap<String, Spanned<[f64; 3]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub seed: u64,
    pub scale: f64,
    /// Full offset vector; alternatively `gap` along coordinate `axis`.
    pub offset: Option<Vec<f64>>,
    pub gap: Option<f64>,
    #[serde(default)]
    pub axis: usize,
    /// Rare classes to reseed; all rare classes when absent.
    pub classes: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    pub strategy: Spanned<String>,
    pub base_seed: u64,
    #[serde(default = "defaults::n_per_class")]
    pub n_per_class: usize,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::runs")]
    pub runs: usize,
    #[serde(default = "defaults::ci_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub warm_start: bool,
    pub threads: Option<usize>,
    #[serde(default = "defaults::architecture")]
    pub architecture: Spanned<String>,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub train: TrainSection,
    pub few_shot: Option<FewShotSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::init_scale")]
    pub init_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("all train keys have defaults")
    }
}

impl TrainSection {
    fn to_config(&self, seed: u64) -> TrainConfig<f64> {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            init_scale: self.init_scale,
            seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShotSection {
    #[serde(default = "defaults::way")]
    pub way: usize,
    #[serde(default = "defaults::shot")]
    pub shot: usize,
    #[serde(default = "defaults::queries")]
    pub queries: usize,
    #[serde(default = "defaults::episodes")]
    pub episodes: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default = "defaults::relation_hidden")]
    pub relation_hidden: usize,
    #[serde(default)]
    pub optim: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub plots: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissectSection {
    pub rare_class: Spanned<usize>,
    #[serde(default = "defaults::k")]
    pub k: usize,
}

mod defaults {
    use toml::Spanned;

    pub fn n_per_class() -> usize {
        5
    }
    pub fn iterations() -> usize {
        5
    }
    pub fn runs() -> usize {
        5
    }
    pub fn ci_level() -> f64 {
        0.95
    }
    pub fn architecture() -> Spanned<String> {
        Spanned::new(0..0, "identity".into())
    }
    pub fn hidden() -> usize {
        32
    }
    pub fn relation_hidden() -> usize {
        16
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn epochs() -> usize {
        200
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn epsilon() -> f64 {
        1e-8
    }
    pub fn init_scale() -> f64 {
        0.1
    }
    pub fn way() -> usize {
        5
    }
    pub fn shot() -> usize {
        1
    }
    pub fn queries() -> usize {
        8
    }
    pub fn episodes() -> usize {
        2000
    }
    pub fn k() -> usize {
        2
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, path)
    }

    /// Parses `text`; `path` is used for messages and relative imports.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(1);
            anyhow!("{}:{line}: {}", path.display(), e.message())
        })?;
        cfg.source = Source { path: path.to_path_buf(), text: text.to_string() };
        Ok(cfg)
    }

    /// `path:line: key: message` for a value located at `span`.
    fn error_at(&self, span: Range<usize>, key: &str, msg: impl std::fmt::Display) -> anyhow::Error {
        let line = line_of(&self.source.text, span.start);
        anyhow!("{}:{line}: {key}: {msg}", self.source.path.display())
    }

    /// Error for a key that has no recorded position; anchored to its section header.
    fn error_in(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> anyhow::Error {
        let header = format!("[{section}]");
        let line = self.source.text.lines().position(|l| l.trim() == header).map_or(1, |i| i + 1);
        anyhow!("{}:{line}: {key}: {msg}", self.source.path.display())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        self.source.path.parent().map_or_else(|| p.to_path_buf(), |dir| dir.join(p))
    }

    /// Output directory: command-line flag, then `output.dir`, then the
    /// environment variable, then `./out`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(f) = flag {
            return f.to_path_buf();
        }
        if let Some(d) = &self.output.dir {
            return self.resolve(d);
        }
        std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from)
    }

    pub fn rare_classes(&self) -> Result<BTreeSet<usize>> {
        if let Some(p) = &self.dataset.preset {
            let set: BTreeSet<usize> = match p.get_ref().as_str() {
                "toy" => [ToyModel::RARE_CLASS].into(),
                "desk" => DeskBenchmark::new(self.dataset.seed).rare_ids().collect(),
                other => return Err(self.error_at(p.span(), "dataset.preset", format!("unknown preset {other:?}; use toy or desk"))),
            };
            if let Some(r) = &self.dataset.rare_classes {
                if r.get_ref().iter().copied().collect::<BTreeSet<_>>() != set {
                    return Err(self.error_at(r.span(), "dataset.rare_classes", format!("preset fixes the rare classes to {set:?}")));
                }
            }
            return Ok(set);
        }
        let r = self
            .dataset
            .rare_classes
            .as_ref()
            .ok_or_else(|| self.error_in("dataset", "dataset.rare_classes", "required unless a preset is used"))?;
        if r.get_ref().is_empty() {
            return Err(self.error_at(r.span(), "dataset.rare_classes", "at least one rare class is needed"));
        }
        Ok(r.get_ref().iter().copied().collect())
    }

    fn split_config(&self, rare: &BTreeSet<usize>) -> Result<SplitConfig> {
        let s = &self.dataset.split;
        let mut cfg = match self.dataset.preset.as_ref().map(|p| p.get_ref().as_str()) {
            Some("toy") => ToyModel::new(self.dataset.seed).split_config(),
            Some("desk") => DeskBenchmark::new(self.dataset.seed).split_config(),
            _ => SplitConfig::new(rare.iter().copied(), self.dataset.seed),
        };
        if let Some(seed) = s.seed {
            cfg.seed = seed;
        }
        if let Some(n) = s.train_per_rare {
            cfg.train_per_rare = n;
        }
        if let Some(n) = s.val_per_rare {
            cfg.val_per_rare = n;
        }
        let fractions = |key: &str, f: &Spanned<[f64; 3]>| -> Result<SplitFractions> {
            let [a, b, c] = *f.get_ref();
            let fr = SplitFractions::new(a, b, c);
            fr.validate(None).map_err(|e| self.error_at(f.span(), key, e))?;
            Ok(fr)
        };
        if let Some(f) = &s.common_fractions {
            cfg.common_fractions = fractions("dataset.split.common_fractions", f)?;
        }
        for (class, f) in &s.class_fractions {
            let key = format!("dataset.split.class_fractions.{class}");
            let id: usize = class.parse().map_err(|_| self.error_at(f.span(), &key, "class keys must be integers"))?;
            cfg.class_fractions.insert(id, fractions(&key, f)?);
        }
        Ok(cfg)
    }

    fn cluster_specs(&self) -> Result<Vec<ClusterSpec>> {
        let ds = &self.dataset;
        match ds.preset.as_ref().map(|p| p.get_ref().as_str()) {
            Some("toy") => return Ok(ToyModel::new(ds.seed).specs()),
            Some("desk") => return Ok(DeskBenchmark::new(ds.seed).specs()),
            _ => {}
        }
        let first_dim = ds.cluster.first().map(|c| c.get_ref().mean.len());
        ds.cluster
            .iter()
            .map(|c| {
                let v = c.get_ref();
                if Some(v.mean.len()) != first_dim || v.mean.is_empty() {
                    return Err(self.error_at(c.span(), "dataset.cluster.mean", "every cluster mean needs the same non-zero length"));
                }
                if !(v.stddev.is_finite() && v.stddev > 0.0) {
                    return Err(self.error_at(c.span(), "dataset.cluster.stddev", "stddev must be positive"));
                }
                Ok(ClusterSpec::new(v.class, v.mean.clone(), v.stddev, v.count))
            })
            .collect()
    }

    /// Builds the split bundle described by the dataset section, including
    /// any synthetic seeds.
    pub fn bundle(&self) -> Result<SplitBundle> {
        let ds = &self.dataset;
        let sources = usize::from(ds.preset.is_some()) + usize::from(!ds.cluster.is_empty()) + usize::from(ds.import.is_some());
        if sources != 1 {
            return Err(self.error_in("dataset", "dataset", "give exactly one of preset, [[dataset.cluster]] or [dataset.import]"));
        }
        let rare = self.rare_classes()?;
        let split_cfg = self.split_config(&rare)?;
        let (dataset, membership) = match &ds.import {
            Some(imp) => {
                let samples_path = self.resolve(&imp.get_ref().samples);
                let file = File::open(&samples_path)
                    .map_err(|e| self.error_at(imp.span(), "dataset.import.samples", format!("{}: {e}", samples_path.display())))?;
                let dataset = read_dataset_csv(BufReader::new(file)).with_context(|| samples_path.display().to_string())?;
                let membership = match &imp.get_ref().split {
                    Some(split) => {
                        let split_path = self.resolve(split);
                        let file = File::open(&split_path)
                            .map_err(|e| self.error_at(imp.span(), "dataset.import.split", format!("{}: {e}", split_path.display())))?;
                        Some(read_split_csv(BufReader::new(file)).with_context(|| split_path.display().to_string())?)
                    }
                    None => None,
                };
                (dataset, membership)
            }
            None => {
                let specs = self.cluster_specs()?;
                (generate_pool(&specs, ds.seed).map_err(|e| self.error_in("dataset", "dataset.cluster", e))?, None)
            }
        };
        let counts = dataset.class_counts();
        for &r in &rare {
            if counts.get(&r).copied().unwrap_or(0) == 0 {
                let span = ds.rare_classes.as_ref().map(|r| r.span());
                let msg = format!("rare class {r} does not occur in the dataset");
                return Err(match span {
                    Some(s) => self.error_at(s, "dataset.rare_classes", msg),
                    None => self.error_in("dataset", "dataset.rare_classes", msg),
                });
            }
        }
        let bundle = match membership {
            Some(m) => bundle_from_membership(&dataset, &m, rare)?,
            None => split_dataset(&dataset, &split_cfg).map_err(|e| self.error_in("dataset", "dataset.split", e))?,
        };
        match &ds.synthetic_seed {
            Some(syn) => self.apply_synthetic(bundle, syn),
            None => Ok(bundle),
        }
    }

    fn apply_synthetic(&self, mut bundle: SplitBundle, syn: &Spanned<SyntheticSection>) -> Result<SplitBundle> {
        let s = syn.get_ref();
        let key = "dataset.synthetic_seed";
        let offset = match (&s.offset, s.gap) {
            (Some(o), None) => o.clone(),
            (None, Some(g)) => {
                if s.axis >= bundle.dim {
                    return Err(self.error_at(
                        syn.span(),
                        &format!("{key}.axis"),
                        format!("axis must be below the dimension {}", bundle.dim),
                    ));
                }
                let mut o = vec![0.0; bundle.dim];
                o[s.axis] = g;
                o
            }
            _ => return Err(self.error_at(syn.span(), key, "give exactly one of offset or gap")),
        };
        let classes: Vec<usize> = s.classes.clone().unwrap_or_else(|| bundle.rare_classes.iter().copied().collect());
        for c in classes {
            bundle = inject_synthetic_seed(&bundle, c, &offset, s.scale, s.seed).map_err(|e| self.error_at(syn.span(), key, e))?;
        }
        Ok(bundle)
    }

    pub fn loop_config(&self) -> Result<LoopConfig<f64>> {
        let sec = self.active.as_ref().ok_or_else(|| self.error_in("loop", "loop", "missing [loop] section"))?;
        let l = sec.get_ref();
        let strategy: StrategyKind = l.strategy.get_ref().parse().map_err(|e| self.error_at(l.strategy.span(), "loop.strategy", e))?;
        let architecture = match l.architecture.get_ref().as_str() {
            "identity" => Architecture::Identity,
            "one_hidden" => Architecture::OneHidden { hidden: l.hidden },
            other => {
                return Err(self.error_at(
                    l.architecture.span(),
                    "loop.architecture",
                    format!("unknown architecture {other:?}; use identity or one_hidden"),
                ))
            }
        };
        let few_shot = l.few_shot.as_ref().map(|f| FewShotConfig {
            episode: EpisodeConfig { way: f.way, shot: f.shot, queries: f.queries, episodes: f.episodes, seed: 0 },
            hidden: f.hidden,
            relation_hidden: f.relation_hidden,
            optim: f.optim.to_config(0),
        });
        let cfg = LoopConfig {
            n_per_class: l.n_per_class,
            iterations: l.iterations,
            strategy,
            train: l.train.to_config(l.base_seed),
            architecture,
            few_shot,
            runs: l.runs,
            ci_level: l.ci_level,
            base_seed: l.base_seed,
            warm_start: l.warm_start,
            threads: l.threads,
        };
        cfg.validate().map_err(|e| self.error_at(sec.span(), "loop", e))?;
        Ok(cfg)
    }

    pub fn dissect_settings(&self) -> Result<(usize, usize)> {
        let d = self.dissect.as_ref().ok_or_else(|| self.error_in("dissect", "dissect", "missing [dissect] section"))?;
        let rare = self.rare_classes()?;
        let class = *d.get_ref().rare_class.get_ref();
        if !rare.contains(&class) {
            return Err(self.error_at(
                d.get_ref().rare_class.span(),
                "dissect.rare_class",
                format!("{class} is not one of the rare classes {rare:?}"),
            ));
        }
        Ok((class, d.get_ref().k))
    }

    pub fn plots(&self) -> bool {
        self.output.plots
    }
}

/// 1-based line number of byte offset `pos`.
fn line_of(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("exp.toml"))
    }

    const TOY: &str = "[dataset]\nseed = 3\npreset = \"toy\"\n\n[loop]\nstrategy = \"max_rare_prob\"\nbase_seed = 7\nruns = 2\n";

    #[test]
    fn toy_preset_round_trip() {
        let cfg = parse(TOY).unwrap();
        let bundle = cfg.bundle().unwrap();
        assert_eq!(bundle.train_count(2), 1);
        assert_eq!(bundle.pool_count(2), 10);
        let lc = cfg.loop_config().unwrap();
        assert_eq!(lc.runs, 2);
        assert_eq!(lc.base_seed, 7);
        assert_eq!(lc.train.epochs, 200);
    }

    #[test]
    fn syntax_error_names_line() {
        let err = parse("[dataset]\nseed = 3\npreset = toy\n").unwrap_err().to_string();
        assert!(err.starts_with("exp.toml:3:"), "{err}");
    }

    #[test]
    fn unknown_key_names_line() {
        let err = parse("[dataset]\nseed = 3\npreset = \"toy\"\n\n[loop]\nstrategy = \"entropy\"\nbase_seed = 1\nepochz = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("exp.toml:8:"), "{err}");
        assert!(err.contains("epochz"), "{err}");
    }

    #[test]
    fn bad_strategy_names_key_and_line() {
        let text = TOY.replace("max_rare_prob", "most_rare");
        let err = parse(&text).unwrap().loop_config().unwrap_err().to_string();
        assert!(err.starts_with("exp.toml:6: loop.strategy:"), "{err}");
    }

    #[test]
    fn missing_seed_is_rejected() {
        let err = parse("[dataset]\npreset = \"toy\"\n").unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn missing_rare_class_is_reported() {
        let text = "[dataset]\nseed = 1\nrare_classes = [5]\n\n[[dataset.cluster]]\nclass = 0\nmean = [0.0]\nstddev = 1.0\ncount = 10\n";
        let err = parse(text).unwrap().bundle().unwrap_err().to_string();
        assert!(err.starts_with("exp.toml:3: dataset.rare_classes:"), "{err}");
    }

    #[test]
    fn zero_count_cluster_is_absent() {
        let text = "[dataset]\nseed = 1\nrare_classes = [2]\n[dataset.split]\ncommon_fractions = [0.5, 0.0, 0.5]\n\
            [[dataset.cluster]]\nclass = 0\nmean = [0.0, 0.0]\nstddev = 1.0\ncount = 20\n\
            [[dataset.cluster]]\nclass = 1\nmean = [3.0, 0.0]\nstddev = 1.0\ncount = 0\n\
            [[dataset.cluster]]\nclass = 2\nmean = [0.0, 3.0]\nstddev = 1.0\ncount = 13\n";
        let b = parse(text).unwrap().bundle().unwrap();
        assert_eq!(b.class_samples(1).count(), 0);
        assert_eq!(b.len(), 33);
    }

    #[test]
    fn synthetic_gap_replaces_rare_train_sample() {
        let text = TOY.replace("preset = \"toy\"\n", "preset = \"toy\"\nsynthetic_seed = { seed = 4, scale = 0.5, gap = 0.5 }\n");
        let plain = parse(TOY).unwrap().bundle().unwrap();
        let b = parse(&text).unwrap().bundle().unwrap();
        let old: Vec<u64> = plain.train.iter().filter(|s| s.label == 2).map(|s| s.id).collect();
        let new: Vec<u64> = b.train.iter().filter(|s| s.label == 2).map(|s| s.id).collect();
        assert_eq!(old.len(), new.len());
        assert_ne!(old, new);
        assert_eq!(b.len(), plain.len());
    }

    #[test]
    fn out_dir_precedence() {
        let cfg = parse("[dataset]\nseed = 0\npreset = \"toy\"\n[output]\ndir = \"results\"\n").unwrap();
        assert_eq!(cfg.out_dir(Some(Path::new("/tmp/x"))), PathBuf::from("/tmp/x"));
        assert_eq!(cfg.out_dir(None), PathBuf::from("results"));
    }

    #[test]
    fn dissect_class_must_be_rare() {
        let text = format!("{TOY}\n[dissect]\nrare_class = 1\n");
        let err = parse(&text).unwrap().dissect_settings().unwrap_err().to_string();
        assert!(err.contains("dissect.rare_class"), "{err}");
        assert!(err.starts_with("exp.toml:11:"), "{err}");
    }
}
