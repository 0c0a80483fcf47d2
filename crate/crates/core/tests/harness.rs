mod common;

use std::fs;
use std::path::{Path, PathBuf};

use marl_pricing::algos::{Algorithm, Hyperparams};
use marl_pricing::harness::{compare, read_evals, run_experiment, run_single, ExperimentConfig, Manifest, RunSpec};
use marl_pricing::market::MarketConfig;

use common::demand;

fn small_hyper() -> Hyperparams {
    Hyperparams {
        warmup: 32,
        minibatch_size: 16,
        actor_hidden: 8,
        critic_hidden: 8,
        value_hidden: 8,
        ..Hyperparams::default()
    }
}

fn spec(algorithm: Algorithm, seed: u64, episodes: usize, dir: &Path) -> RunSpec {
    RunSpec {
        algorithm,
        seed,
        episodes,
        eval_interval: 20,
        eval_episodes: 2,
        checkpoint_interval: 0,
        hyper: small_hyper(),
        market: MarketConfig {
            noise_sigma: 50.0,
            reference_price: 2.0,
            ..MarketConfig::default()
        },
        demand: demand(3000.0, 0.8, 2.0),
        dir: dir.to_path_buf(),
    }
}

fn experiment(out: &Path, algorithms: Vec<Algorithm>, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        algorithms,
        seeds,
        episodes: 4,
        eval_interval: 2,
        eval_episodes: 1,
        output_dir: out.to_path_buf(),
        workers: 2,
        hyper: small_hyper(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn eval_rows_follow_the_cadence() {
    let dir = tempfile::tempdir().unwrap();
    run_single(&spec(Algorithm::Mappo, 0, 40, dir.path())).unwrap();
    let rows = read_evals(&dir.path().join("evals.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.episode).collect::<Vec<_>>(), vec![0, 20, 40]);
    assert!(rows.iter().all(|r| r.per_agent.len() == 3));
    for name in [
        "curves.csv",
        "manifest.json",
        "traces/eval_0040.csv",
        "checkpoints/ep_0040.json",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let manifest = Manifest::load(dir.path()).unwrap();
    assert_eq!(manifest.episodes, 40);
}

#[test]
fn one_directory_per_algorithm_and_seed() {
    let out = tempfile::tempdir().unwrap();
    let runs = run_experiment(&experiment(
        out.path(),
        vec![Algorithm::Mappo, Algorithm::Iddpg],
        vec![0, 1],
    ))
    .unwrap();
    assert_eq!(runs.len(), 4);
    let mut names: Vec<String> = fs::read_dir(out.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["iddpg_seed0", "iddpg_seed1", "mappo_seed0", "mappo_seed1"]);
}

#[test]
fn reruns_are_byte_identical() {
    let files = |dir: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        [
            "curves.csv",
            "evals.csv",
            "traces/eval_0004.csv",
            "checkpoints/ep_0004.json",
        ]
        .iter()
        .map(|f| (PathBuf::from(f), fs::read(dir.join(f)).unwrap()))
        .collect()
    };
    for algo in Algorithm::ALL {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut s = spec(algo, 7, 4, a.path());
        s.eval_interval = 2;
        run_single(&s).unwrap();
        s.dir = b.path().to_path_buf();
        run_single(&s).unwrap();
        assert!(files(a.path()) == files(b.path()), "{algo} differs between reruns");
    }
}

#[test]
fn single_seed_has_no_stability() {
    let dir = tempfile::tempdir().unwrap();
    run_single(&spec(Algorithm::Mappo, 0, 20, dir.path())).unwrap();
    let cmp = compare(&[dir.path().to_path_buf()]).unwrap();
    assert_eq!(cmp.reports.len(), 1);
    assert_eq!(cmp.reports[0].stability_std, None);
    assert_eq!(cmp.reports[0].seeds, 1);
}

#[test]
fn identical_runs_have_zero_stability() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run_single(&spec(Algorithm::Mappo, 3, 20, &a)).unwrap();
    run_single(&spec(Algorithm::Mappo, 3, 20, &b)).unwrap();
    let cmp = compare(&[a, b]).unwrap();
    assert_eq!(cmp.reports[0].seeds, 2);
    assert_eq!(cmp.reports[0].stability_std, Some(0.0));
}

#[test]
fn sample_efficiency_needs_the_independent_baseline() {
    let root = tempfile::tempdir().unwrap();
    let runs = run_experiment(&experiment(root.path(), vec![Algorithm::Mappo], vec![0])).unwrap();
    let cmp = compare(&[runs[0].dir.clone()]).unwrap();
    assert_eq!(cmp.reports[0].sample_efficiency_episodes, None);
    assert!(!cmp.table().contains("Sample Eff."));

    let other = root.path().join("baseline");
    run_experiment(&experiment(&other, vec![Algorithm::Iddpg], vec![0])).unwrap();
    let cmp = compare(&[root.path().to_path_buf(), other]).unwrap();
    assert_eq!(cmp.reports.len(), 2);
    assert!(cmp.table().contains("Sample Eff."));
}

#[test]
fn corrupt_manifest_is_excluded() {
    let root = tempfile::tempdir().unwrap();
    run_experiment(&experiment(root.path(), vec![Algorithm::Mappo], vec![0, 1])).unwrap();
    let bad = root.path().join("mappo_seed1");
    fs::write(bad.join("manifest.json"), "{ not json").unwrap();
    let cmp = compare(&[root.path().to_path_buf()]).unwrap();
    assert_eq!(cmp.reports[0].seeds, 1);
    assert_eq!(cmp.excluded.len(), 1);
    assert_eq!(cmp.excluded[0].0, bad);
}

#[test]
fn tampered_manifest_fails_the_hash_check() {
    let dir = tempfile::tempdir().unwrap();
    run_single(&spec(Algorithm::Mappo, 0, 20, dir.path())).unwrap();
    let path = dir.path().join("manifest.json");
    let text = fs::read_to_string(&path)
        .unwrap()
        .replacen("\"seed\": 0", "\"seed\": 1", 1);
    fs::write(&path, text).unwrap();
    assert!(Manifest::load(dir.path()).is_err());
}

#[test]
fn missing_demand_file_is_rejected_before_training() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("out");
    let cfg = ExperimentConfig {
        demand_model: Some(root.path().join("nope.json")),
        ..experiment(&out, vec![Algorithm::Mappo], vec![0])
    };
    let err = run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("nope.json"), "{err}");
    assert!(!out.join("mappo_seed0").exists());
}

#[test]
fn config_file_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let path = root.path().join("exp.toml");
    fs::write(
        &path,
        "algorithms = [\"mappo\"]\nseeds = [2]\nepisodes = 4\neval_interval = 2\neval_episodes = 1\n\
         output_dir = \"out\"\n[market]\nbeta = 1.5\n[hyper]\nvalue_hidden = 8\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.output_dir, root.path().join("out"));
    let runs = run_experiment(&cfg).unwrap();
    let manifest = Manifest::load(&runs[0].dir).unwrap();
    assert_eq!(manifest.market.beta, 1.5);
    assert_eq!(manifest.hyper.value_hidden, 8);
    assert_eq!(manifest.seed, 2);
}

#[test]
fn bundled_example_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/benchmark.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.algorithms, Algorithm::ALL.to_vec());
    assert_eq!(cfg.seeds.len(), 10);
    assert_eq!(cfg.hyper, Hyperparams::default());
    assert_eq!(cfg.market_config().unwrap().beta, 10.0);
}
