//! The active-search loop: fit, score the pool, select, label with the
//! ground-truth oracle, move to the training set, refit, repeat.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{config, usage, Error, Result};
use crate::fewshot::{train_protonet, train_relationnet, EpisodeConfig, RelationModel};
use crate::metrics::{confidence_interval, f1_scores, n_rare, MetricSummary};
use crate::netcore::{fit, Architecture, Classifier, Embedder, TrainConfig};
use crate::scalar::Scalar;
use crate::seeding::{derive_seed, derived_rng, stream};
use crate::strategies::{
    score_entropy, score_max_rare_prob, score_proto_distance, score_random, score_relation, select_top_n, ScoredPool, StrategyKind,
};
use crate::synthdata::{Sample, SampleId, SplitBundle};

/// Settings for the episodic models behind `ProtoDistance` and `RelationSim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotConfig<T> {
    pub episode: EpisodeConfig,
    /// Width of the shared one-hidden-layer embedder.
    pub hidden: usize,
    /// Width of the relation head's hidden layer.
    pub relation_hidden: usize,
    pub optim: TrainConfig<T>,
}

impl<T: Scalar> Default for FewShotConfig<T> {
    fn default() -> Self {
        Self { episode: EpisodeConfig::default(), hidden: 32, relation_hidden: 16, optim: TrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfig<T> {
    /// Samples labeled per rare class per iteration (`N`).
    pub n_per_class: usize,
    /// Active iterations after the initial fit (`T`).
    pub iterations: usize,
    pub strategy: StrategyKind,
    pub train: TrainConfig<T>,
    pub architecture: Architecture,
    pub few_shot: Option<FewShotConfig<T>>,
    pub runs: usize,
    pub ci_level: f64,
    pub base_seed: u64,
    /// Keep the previous iteration's parameters instead of re-initializing.
    pub warm_start: bool,
    /// Worker threads for independent runs; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl<T: Scalar> Default for LoopConfig<T> {
    fn default() -> Self {
        Self {
            n_per_class: 5,
            iterations: 5,
            strategy: StrategyKind::MaxRareProb,
            train: TrainConfig::default(),
            architecture: Architecture::Identity,
            few_shot: None,
            runs: 5,
            ci_level: 0.95,
            base_seed: 0,
            warm_start: false,
            threads: None,
        }
    }
}

impl<T: Scalar> LoopConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class < 1 {
            return Err(config("n_per_class must be at least 1"));
        }
        if self.runs < 1 {
            return Err(config("runs must be at least 1"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(config("ci_level must lie in (0, 1)"));
        }
        if self.threads == Some(0) {
            return Err(config("threads must be positive"));
        }
        self.train.validate()?;
        if self.strategy.is_few_shot() {
            let fs = self.few_shot.as_ref().ok_or_else(|| config(format!("strategy {} needs a few-shot section", self.strategy)))?;
            fs.episode.validate()?;
            fs.optim.validate()?;
        }
        Ok(())
    }
}

/// Samples moved to the training set in one selection step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MovedBatch {
    /// Target rare class, or `None` for pool-wide strategies.
    pub rare_class: Option<usize>,
    pub ids: Vec<SampleId>,
    pub true_labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub n_rare: f64,
    pub f1_rare_macro: f64,
    pub f1_overall: f64,
    pub train_size: usize,
    pub pool_size: usize,
    /// Empty at `t = 0`.
    pub moved: Vec<MovedBatch>,
}

impl IterationRecord {
    pub fn moved_count(&self) -> usize {
        self.moved.iter().map(|m| m.ids.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord<T> {
    pub run: usize,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub final_classifier: Classifier<T>,
    /// Per-epoch training loss of the last fit.
    pub final_losses: Vec<T>,
    pub final_bundle: SplitBundle<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub t: usize,
    pub n_rare_mean: f64,
    pub f1_mean: f64,
    /// `None` when there is a single run.
    pub n_rare_ci: Option<MetricSummary<f64>>,
    pub f1_ci: Option<MetricSummary<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport<T> {
    pub strategy: StrategyKind,
    pub runs: Vec<RunRecord<T>>,
    pub aggregate: Vec<AggregateRow>,
}

/// Returns the pool samples with the given ids, carrying their ground-truth
/// labels, in the order requested.
pub fn oracle_label<T: Scalar>(pool: &[Sample<T>], ids: &[SampleId]) -> Result<Vec<Sample<T>>> {
    ids.iter()
        .map(|id| pool.iter().find(|s| s.id == *id).cloned().ok_or_else(|| usage(format!("sample {id} is not in the pool"))))
        .collect()
}

/// Labels `ids` and moves them from the pool into the training set.
pub fn move_to_train<T: Scalar>(bundle: &mut SplitBundle<T>, ids: &[SampleId], rare_class: Option<usize>) -> Result<MovedBatch> {
    let labeled = oracle_label(&bundle.pool, ids)?;
    let taken: HashSet<SampleId> = ids.iter().copied().collect();
    bundle.pool.retain(|s| !taken.contains(&s.id));
    let batch =
        MovedBatch { rare_class, ids: labeled.iter().map(|s| s.id).collect(), true_labels: labeled.iter().map(|s| s.label).collect() };
    bundle.train.extend(labeled);
    Ok(batch)
}

fn evaluate<T: Scalar>(classifier: &Classifier<T>, bundle: &SplitBundle<T>) -> Result<(f64, f64)> {
    if bundle.validation.is_empty() {
        return Ok((0.0, 0.0));
    }
    let predictions = bundle.validation.iter().map(|s| classifier.predict(&s.features)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = bundle.validation.iter().map(|s| s.label).collect();
    let rare: Vec<usize> = bundle.rare_classes.iter().copied().collect();
    let all: Vec<usize> = (0..bundle.num_classes).collect();
    Ok((f1_scores(&predictions, &labels, &rare)?.macro_f1, f1_scores(&predictions, &labels, &all)?.macro_f1))
}

fn record<T: Scalar>(t: usize, classifier: &Classifier<T>, bundle: &SplitBundle<T>, moved: Vec<MovedBatch>) -> Result<IterationRecord> {
    let (f1_rare_macro, f1_overall) = evaluate(classifier, bundle)?;
    Ok(IterationRecord {
        t,
        n_rare: n_rare(bundle, &bundle.rare_classes),
        f1_rare_macro,
        f1_overall,
        train_size: bundle.train.len(),
        pool_size: bundle.pool.len(),
        moved,
    })
}

struct RunContext<'a, T> {
    cfg: &'a LoopConfig<T>,
    seed: u64,
    train_cfg: TrainConfig<T>,
}

impl<T: Scalar> RunContext<'_, T> {
    fn refit(&self, previous: Option<Classifier<T>>, bundle: &SplitBundle<T>) -> Result<(Classifier<T>, Vec<T>)> {
        let start = match previous {
            Some(c) if self.cfg.warm_start => c,
            _ => self.train_cfg.init_classifier(self.cfg.architecture, bundle.dim, bundle.num_classes),
        };
        fit(start, &bundle.train, &self.train_cfg)
    }

    fn few_shot(&self, t: usize) -> Result<(&FewShotConfig<T>, EpisodeConfig, TrainConfig<T>, crate::seeding::Rng)> {
        let fs = self.cfg.few_shot.as_ref().ok_or_else(|| config(format!("strategy {} needs a few-shot section", self.cfg.strategy)))?;
        let episode = EpisodeConfig { seed: derive_seed(self.seed, &[stream::EPISODES, t as u64]), ..fs.episode.clone() };
        let optim = TrainConfig { seed: self.seed, ..fs.optim.clone() };
        let rng = derived_rng(self.seed, &[stream::FEWSHOT_INIT, t as u64]);
        Ok((fs, episode, optim, rng))
    }

    /// One selection round at iteration `t`, mutating the bundle.
    fn select(&self, t: usize, classifier: &Classifier<T>, bundle: &mut SplitBundle<T>) -> Result<Vec<MovedBatch>> {
        let n = self.cfg.n_per_class;
        let rare: Vec<usize> = bundle.rare_classes.iter().copied().collect();
        let mut moved = Vec::new();
        match self.cfg.strategy {
            StrategyKind::MaxRareProb => {
                for &c in &rare {
                    let scored = score_max_rare_prob(classifier, &bundle.pool, c)?;
                    moved.push(self.take(bundle, &scored, n, Some(c))?);
                }
            }
            StrategyKind::Entropy => {
                let scored = score_entropy(classifier, &bundle.pool)?;
                moved.push(self.take(bundle, &scored, n * rare.len(), None)?);
            }
            StrategyKind::Random => {
                let scored = score_random(&bundle.pool, derive_seed(self.seed, &[stream::RANDOM_SCORES, t as u64]));
                moved.push(self.take(bundle, &scored, n * rare.len(), None)?);
            }
            StrategyKind::ProtoDistance => {
                let (fs, episode, optim, mut rng) = self.few_shot(t)?;
                let embedder = Embedder::init(Architecture::OneHidden { hidden: fs.hidden }, bundle.dim, optim.init_scale, &mut rng);
                let (embedder, _) = train_protonet(embedder, &bundle.train, &episode, &optim)?;
                for &c in &rare {
                    let support: Vec<Sample<T>> = bundle.train.iter().filter(|s| s.label == c).cloned().collect();
                    let scored = score_proto_distance(&embedder, &support, &bundle.pool)?;
                    moved.push(self.take(bundle, &scored, n, Some(c))?);
                }
            }
            StrategyKind::RelationSim => {
                let (fs, episode, optim, mut rng) = self.few_shot(t)?;
                let embedder = Embedder::init(Architecture::OneHidden { hidden: fs.hidden }, bundle.dim, optim.init_scale, &mut rng);
                let model = RelationModel::init(embedder, fs.relation_hidden, optim.init_scale, &mut rng);
                let (model, _) = train_relationnet(model, &bundle.train, &episode, &optim)?;
                if !model.is_trained() {
                    return Err(config("relation model needs at least one training episode"));
                }
                for &c in &rare {
                    let support: Vec<Sample<T>> = bundle.train.iter().filter(|s| s.label == c).cloned().collect();
                    let scored = score_relation(&model, &support, &bundle.pool)?;
                    moved.push(self.take(bundle, &scored, n, Some(c))?);
                }
            }
        }
        Ok(moved)
    }

    fn take(&self, bundle: &mut SplitBundle<T>, scored: &ScoredPool<T>, n: usize, class: Option<usize>) -> Result<MovedBatch> {
        let ids = select_top_n(scored, n);
        move_to_train(bundle, &ids, class)
    }
}

fn check_invariants<T: Scalar>(
    bundle: &SplitBundle<T>,
    total: usize,
    moved: &[MovedBatch],
    budget: usize,
    pool_before: usize,
) -> Result<()> {
    if bundle.len() != total {
        return Err(Error::Usage(format!("sample count changed from {total} to {}", bundle.len())));
    }
    bundle.check_disjoint()?;
    let n_moved: usize = moved.iter().map(|m| m.ids.len()).sum();
    if n_moved > budget || n_moved != budget.min(pool_before) {
        return Err(Error::Usage(format!("moved {n_moved} samples with budget {budget} and pool {pool_before}")));
    }
    Ok(())
}

fn run_once<T: Scalar>(bundle: &SplitBundle<T>, cfg: &LoopConfig<T>, run: usize) -> Result<RunRecord<T>> {
    let seed = cfg.base_seed.wrapping_add(run as u64);
    let ctx = RunContext { cfg, seed, train_cfg: TrainConfig { seed, ..cfg.train.clone() } };
    let mut bundle = bundle.clone();
    let total = bundle.len();
    let budget = cfg.n_per_class * bundle.rare_classes.len();

    let (mut classifier, mut losses) = ctx.refit(None, &bundle)?;
    let mut records = vec![record(0, &classifier, &bundle, Vec::new())?];
    for t in 1..=cfg.iterations {
        let pool_before = bundle.pool.len();
        let moved = ctx.select(t, &classifier, &mut bundle)?;
        check_invariants(&bundle, total, &moved, budget, pool_before)?;
        (classifier, losses) = ctx.refit(Some(classifier), &bundle)?;
        records.push(record(t, &classifier, &bundle, moved)?);
    }
    Ok(RunRecord { run, seed, records, final_classifier: classifier, final_losses: losses, final_bundle: bundle })
}

fn aggregate(runs: &[Vec<IterationRecord>], level: f64) -> Result<Vec<AggregateRow>> {
    let steps = runs.first().map_or(0, Vec::len);
    (0..steps)
        .map(|t| {
            let nr: Vec<f64> = runs.iter().map(|r| r[t].n_rare).collect();
            let f1: Vec<f64> = runs.iter().map(|r| r[t].f1_rare_macro).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (n_rare_ci, f1_ci) = if runs.len() >= 2 {
                (Some(confidence_interval(&nr, level)?), Some(confidence_interval(&f1, level)?))
            } else {
                (None, None)
            };
            Ok(AggregateRow { t, n_rare_mean: mean(&nr), f1_mean: mean(&f1), n_rare_ci, f1_ci })
        })
        .collect()
}

/// Runs `cfg.runs` independent repetitions (run `r` uses seed
/// `base_seed + r`) and aggregates them per iteration.
pub fn run_active_loop<T: Scalar>(bundle: &SplitBundle<T>, cfg: &LoopConfig<T>) -> Result<RunReport<T>> {
    cfg.validate()?;
    bundle.check_disjoint()?;
    if bundle.train.is_empty() {
        return Err(config("training set is empty"));
    }
    let go = || (0..cfg.runs).into_par_iter().map(|r| run_once(bundle, cfg, r)).collect::<Result<Vec<_>>>();
    let runs = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| config(format!("cannot build thread pool: {e}")))?
            .install(go)?,
        None => go()?,
    };
    let records: Vec<Vec<IterationRecord>> = runs.iter().map(|r| r.records.clone()).collect();
    let aggregate = aggregate(&records, cfg.ci_level)?;
    Ok(RunReport { strategy: cfg.strategy, runs, aggregate })
}

// --- CSV ---------------------------------------------------------------------

/// `run,t,strategy,n_rare,f1_rare_macro,f1_overall`
pub fn write_runs_csv<T: Scalar, W: Write>(mut w: W, report: &RunReport<T>) -> Result<()> {
    writeln!(w, "run,t,strategy,n_rare,f1_rare_macro,f1_overall")?;
    for run in &report.runs {
        for r in &run.records {
            writeln!(w, "{},{},{},{},{},{}", run.run, r.t, report.strategy, r.n_rare, r.f1_rare_macro, r.f1_overall)?;
        }
    }
    Ok(())
}

/// `t,strategy,n_rare_mean,n_rare_ci_lo,n_rare_ci_hi,f1_mean,f1_ci_lo,f1_ci_hi`;
/// interval columns are empty for single-run reports.
pub fn write_aggregate_csv<T: Scalar, W: Write>(mut w: W, report: &RunReport<T>) -> Result<()> {
    writeln!(w, "t,strategy,n_rare_mean,n_rare_ci_lo,n_rare_ci_hi,f1_mean,f1_ci_lo,f1_ci_hi")?;
    let bounds = |s: &Option<MetricSummary<f64>>| match s {
        Some(s) => (s.ci_lo.to_string(), s.ci_hi.to_string()),
        None => (String::new(), String::new()),
    };
    for a in &report.aggregate {
        let (nl, nh) = bounds(&a.n_rare_ci);
        let (fl, fh) = bounds(&a.f1_ci);
        writeln!(w, "{},{},{},{nl},{nh},{},{fl},{fh}", a.t, report.strategy, a.n_rare_mean, a.f1_mean)?;
    }
    Ok(())
}

/// `run,t,rare_class,sample_id,true_label`, one row per moved sample.
pub fn write_audit_csv<T: Scalar, W: Write>(mut w: W, report: &RunReport<T>) -> Result<()> {
    writeln!(w, "run,t,rare_class,sample_id,true_label")?;
    for run in &report.runs {
        for r in &run.records {
            for batch in &r.moved {
                let class = batch.rare_class.map(|c| c.to_string()).unwrap_or_default();
                for (id, label) in batch.ids.iter().zip(&batch.true_labels) {
                    writeln!(w, "{},{},{class},{id},{label}", run.run, r.t)?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_pool, split_dataset, ClusterSpec, SplitConfig};

    fn small_bundle() -> SplitBundle<f64> {
        let specs = vec![
            ClusterSpec::new(0, vec![-1.0, 1.0], 0.5, 120),
            ClusterSpec::new(1, vec![-1.0, -1.0], 0.5, 120),
            ClusterSpec::new(2, vec![1.0, 0.0], 0.3, 20),
            ClusterSpec::new(3, vec![0.0, 2.0], 0.3, 20),
        ];
        let ds = generate_pool(&specs, 3).unwrap();
        split_dataset(&ds, &SplitConfig::new([2, 3], 4)).unwrap()
    }

    fn quick(strategy: StrategyKind) -> LoopConfig<f64> {
        LoopConfig {
            strategy,
            iterations: 3,
            runs: 2,
            n_per_class: 4,
            train: TrainConfig { epochs: 20, ..Default::default() },
            few_shot: Some(FewShotConfig {
                episode: EpisodeConfig { way: 2, queries: 4, episodes: 20, ..Default::default() },
                hidden: 8,
                relation_hidden: 4,
                optim: TrainConfig::default(),
            }),
            ..Default::default()
        }
    }

    #[test]
    fn oracle_keeps_ground_truth() {
        let b = small_bundle();
        let picks: Vec<SampleId> =
            b.pool.iter().filter(|s| s.label == 2).take(3).chain(b.pool.iter().filter(|s| s.label == 0).take(2)).map(|s| s.id).collect();
        let labeled = oracle_label(&b.pool, &picks).unwrap();
        assert_eq!(labeled.len(), 5);
        for s in &labeled {
            assert_eq!(s, b.pool.iter().find(|p| p.id == s.id).unwrap());
        }
        let mut moved = b.clone();
        let before = n_rare(&moved, &[2].into());
        move_to_train(&mut moved, &picks, Some(2)).unwrap();
        assert_eq!(n_rare(&moved, &[2].into()), before + 3.0);
        assert!(oracle_label(&b.pool, &[]).unwrap().is_empty());
        assert!(matches!(oracle_label(&b.pool, &[b.train[0].id]), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_iterations_records_initial_fit_only() {
        let b = small_bundle();
        let cfg = LoopConfig { iterations: 0, ..quick(StrategyKind::MaxRareProb) };
        let report = run_active_loop(&b, &cfg).unwrap();
        for run in &report.runs {
            assert_eq!(run.records.len(), 1);
            assert!(run.records[0].moved.is_empty());
            assert_eq!(run.records[0].n_rare, 1.0);
            assert_eq!(run.final_bundle, b);
        }
    }

    #[test]
    fn every_strategy_respects_budget_and_conservation() {
        let b = small_bundle();
        for kind in StrategyKind::ALL {
            let report = run_active_loop(&b, &quick(kind)).unwrap();
            for run in &report.runs {
                assert_eq!(run.records.len(), 4);
                let mut seen = HashSet::new();
                for w in run.records.windows(2) {
                    assert!(w[1].n_rare >= w[0].n_rare, "{kind}");
                    assert_eq!(w[1].moved_count(), 8, "{kind}");
                    assert_eq!(w[1].train_size + w[1].pool_size, w[0].train_size + w[0].pool_size);
                    assert!(w[1].pool_size < w[0].pool_size);
                    for m in &w[1].moved {
                        assert_eq!(m.rare_class.is_some(), kind.is_per_class());
                        for id in &m.ids {
                            assert!(seen.insert(*id), "{kind}: {id} selected twice");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn exhausted_pool_moves_what_is_left() {
        let specs = vec![ClusterSpec::new(0, vec![0.0], 1.0, 10), ClusterSpec::new(1, vec![3.0], 1.0, 6)];
        let ds = generate_pool(&specs, 0).unwrap();
        let mut split = SplitConfig::new([1], 0);
        split.common_fractions = crate::synthdata::SplitFractions::new(0.8, 0.0, 0.2);
        let b = split_dataset(&ds, &split).unwrap();
        assert_eq!(b.pool.len(), 5);
        let cfg = LoopConfig { n_per_class: 4, runs: 1, iterations: 3, ..quick(StrategyKind::MaxRareProb) };
        let report = run_active_loop(&b, &cfg).unwrap();
        let counts: Vec<usize> = report.runs[0].records.iter().map(|r| r.moved_count()).collect();
        assert_eq!(counts, vec![0, 4, 1, 0]);
        assert!(report.aggregate[0].n_rare_ci.is_none());
    }

    #[test]
    fn few_shot_strategy_requires_section() {
        let b = small_bundle();
        let cfg = LoopConfig { few_shot: None, ..quick(StrategyKind::ProtoDistance) };
        assert!(matches!(run_active_loop(&b, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn report_is_independent_of_thread_count() {
        let b = small_bundle();
        let cfg = quick(StrategyKind::Entropy);
        let one = run_active_loop(&b, &LoopConfig { threads: Some(1), ..cfg.clone() }).unwrap();
        let four = run_active_loop(&b, &LoopConfig { threads: Some(4), ..cfg }).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn csv_shapes() {
        let b = small_bundle();
        let report = run_active_loop(&b, &quick(StrategyKind::Random)).unwrap();
        let mut runs = Vec::new();
        write_runs_csv(&mut runs, &report).unwrap();
        let runs = String::from_utf8(runs).unwrap();
        assert_eq!(runs.lines().count(), 1 + 2 * 4);
        let mut agg = Vec::new();
        write_aggregate_csv(&mut agg, &report).unwrap();
        let agg = String::from_utf8(agg).unwrap();
        assert_eq!(agg.lines().count(), 5);
        assert!(agg.lines().nth(1).unwrap().starts_with("0,random,1,1,1,"));
        let mut audit = Vec::new();
        write_audit_csv(&mut audit, &report).unwrap();
        let audit = String::from_utf8(audit).unwrap();
        assert_eq!(audit.lines().count(), 1 + 2 * 3 * 8);
        assert!(audit.lines().nth(1).unwrap().starts_with("0,1,,"));
    }
}
