use factorq::algo::{AlgorithmSpec, Family};
use factorq::config::{load_checkpoint, resolve_output, save_checkpoint, ExperimentConfig, OUTPUT_ROOT_ENV};
use factorq::env::{EnvSpec, MatrixGameSpec};
use factorq::harness::{matrix_tables, qtable_dump, run_seed};
use factorq::Error;

fn config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(EnvSpec::preset("nondec-2x2"), AlgorithmSpec::new(Family::Qtranpp));
    c.run.total_env_steps = 80;
    c.run.evaluation_interval = 40;
    c.run.evaluation_episodes = 4;
    c.run.batch_size = 8;
    c
}

#[test]
fn resolved_config_reproduces_metrics() {
    let c = config();
    let again = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
    let a = run_seed(&c.experiment(), 4, |_| Ok(())).unwrap();
    let b = run_seed(&again.experiment(), 4, |_| Ok(())).unwrap();
    assert_eq!(a.records[1..], b.records[1..]);
    assert!(a.model.params.same_values(&b.model.params));
}

#[test]
fn checkpoint_round_trip_gives_identical_dump() {
    let dir = tempfile::tempdir().unwrap();
    let c = config();
    let exp = c.experiment();
    let r = run_seed(&exp, 5, |_| Ok(())).unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&path, &exp, 5, &r.model).unwrap();
    let (cfg, seed, model) = load_checkpoint(&path).unwrap();
    assert_eq!(seed, 5);
    assert_eq!(cfg.experiment(), exp);
    assert!(model.params.same_values(&r.model.params));
    assert!(model.target.same_values(&r.model.target));
    let game = MatrixGameSpec::nondec_2x2();
    let header = [("seed", "5".to_string())];
    let a = qtable_dump(&matrix_tables(&r.model, &game).unwrap(), &header);
    let b = qtable_dump(&matrix_tables(&model, &game).unwrap(), &header);
    assert_eq!(a, b);
    assert!(a.contains("state,joint_action,estimator,value"));
}

#[test]
fn corrupt_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn load_reports_unknown_keys_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, "[env]\nkind = \"preset\"\nname = \"nondec-2x2\"\n[run]\nbatch = 4\n").unwrap();
    match ExperimentConfig::load(&path) {
        Err(Error::Config(msg)) => assert!(msg.contains("batch") && msg.contains("exp.toml"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn output_root_rebases_relative_dirs_only() {
    // The only test in this binary that touches the variable.
    std::env::set_var(OUTPUT_ROOT_ENV, "/tmp/root");
    assert_eq!(resolve_output("runs/a".as_ref()), std::path::PathBuf::from("/tmp/root/runs/a"));
    assert_eq!(resolve_output("/abs/b".as_ref()), std::path::PathBuf::from("/abs/b"));
    std::env::remove_var(OUTPUT_ROOT_ENV);
    assert_eq!(resolve_output("runs/a".as_ref()), std::path::PathBuf::from("runs/a"));
}
