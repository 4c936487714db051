use std::path::PathBuf;

use activesearch::benchmarks::{DeskBenchmark, ToyModel};
use activesearch::strategies::StrategyKind;
use activesearch_cli::ExperimentConfig;

fn load(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e:#}"))
}

#[test]
fn desk_configs_match_the_library_preset() {
    let desk = DeskBenchmark::new(0);
    let bundle = desk.bundle::<f64>().unwrap();
    for kind in
        [StrategyKind::MaxRareProb, StrategyKind::Entropy, StrategyKind::Random, StrategyKind::ProtoDistance, StrategyKind::RelationSim]
    {
        let cfg = load(&format!("desk_{}.toml", kind.as_str()));
        let mut want = desk.loop_config::<f64>(kind);
        if !kind.is_few_shot() {
            want.few_shot = None;
        }
        assert_eq!(cfg.loop_config().unwrap(), want, "{kind:?}");
        assert_eq!(cfg.bundle().unwrap(), bundle, "{kind:?}");
        let (rare, k) = cfg.dissect_settings().unwrap();
        assert!(desk.rare_ids().contains(&rare) && k == 2);
    }
}

#[test]
fn toy_and_custom_configs_load() {
    let toy = load("toy.toml");
    assert_eq!(toy.bundle().unwrap(), ToyModel::new(0).bundle::<f64>().unwrap());
    assert_eq!(toy.loop_config().unwrap().strategy, StrategyKind::MaxRareProb);

    let custom = load("custom.toml");
    let bundle = custom.bundle().unwrap();
    // Split: 1 train + 2 val for the rare class; the train sample is replaced
    // by its synthetic stand-in, which keeps the count.
    assert_eq!(bundle.train_count(2), 1);
    assert_eq!(bundle.pool_count(2), 17);
    custom.loop_config().unwrap();
}
