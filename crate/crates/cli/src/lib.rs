//! Command implementations behind the `factorq` binary.
//!
//! Every command returns an exit code: 0 on success, 1 when a run fails, 2
//! for bad arguments or configs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use factorq::algo::{AlgorithmSpec, Family};
use factorq::checks::Suite;
use factorq::config::{
    load_checkpoint, resolve_output, save_checkpoint, ExperimentConfig, RESOLVED_CONFIG_FILE,
};
use factorq::env::{EnvSpec, NONDEC_2X2};
use factorq::harness::{
    action_label, format_tables, matrix_tables, qtable_dump, run_seed, Experiment, MetricsRecord, RunResult,
    METRICS_COLUMNS,
};
use factorq::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Env steps per seed for `reproduce-matrix` unless overridden.
pub const REPRODUCE_STEPS: u64 = 10_000;
pub const REPRODUCE_BATCH: usize = 128;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidEnv(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Print the error and map it to an exit code.
pub fn report(result: Result<i32>) -> i32 {
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_{seed}.csv"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_{seed}.bin"))
}

/// Train one seed, streaming metrics rows to `metrics_{seed}.csv` and
/// leaving the final checkpoint next to it.
pub fn train_seed(exp: &Experiment, seed: u64, dir: &Path) -> Result<RunResult> {
    let path = metrics_path(dir, seed);
    let csv_err = |e: csv::Error| Error::Io {
        path: path.clone(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    let result = run_seed(exp, seed, |r: &MetricsRecord| {
        w.serialize(r).map_err(csv_err)?;
        w.flush().map_err(io_err(&path))
    })?;
    if result.records.is_empty() {
        w.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    save_checkpoint(&checkpoint_path(dir, seed), exp, seed, &result.model)?;
    Ok(result)
}

pub fn cmd_train(config_path: &Path) -> Result<i32> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dir = cfg.resolved_output_dir();
    create_dir(&dir)?;
    write_file(&dir.join(RESOLVED_CONFIG_FILE), &cfg.to_toml()?)?;
    let exp = cfg.experiment();
    for &seed in &cfg.seeds {
        let r = train_seed(&exp, seed, &dir)?;
        println!(
            "seed {seed}: {} env steps, {} train steps, eval return {:.4}, greedy {}",
            r.records.last().map_or(0, |x| x.env_steps),
            r.train_steps,
            r.final_eval.mean_return,
            r.final_eval.greedy_action
        );
    }
    println!("wrote {}", dir.display());
    Ok(EXIT_OK)
}

/// The `reproduce-matrix` experiment: nondec-2x2, uniform exploration throughout.
pub fn reproduce_experiment(family: Family, steps: u64) -> Experiment {
    let mut exp = Experiment::new(EnvSpec::preset(NONDEC_2X2), AlgorithmSpec::new(family));
    exp.run.full_exploration = true;
    exp.run.total_env_steps = steps;
    exp.run.batch_size = REPRODUCE_BATCH;
    exp.run.evaluation_interval = (steps / 10).max(1);
    exp
}

pub fn cmd_reproduce_matrix(alg: &str, seeds: u64, out: &Path, steps: Option<u64>) -> Result<i32> {
    let family = Family::parse(alg).map_err(|e| Error::Config(e.to_string()))?;
    if seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()));
    }
    let exp = reproduce_experiment(family, steps.unwrap_or(REPRODUCE_STEPS));
    let dir = resolve_output(out);
    create_dir(&dir)?;
    let cfg = ExperimentConfig {
        seeds: (0..seeds).collect(),
        output_dir: dir.clone(),
        env: exp.env.clone(),
        algorithm: exp.algorithm,
        network: exp.network,
        run: exp.run,
    };
    write_file(&dir.join(RESOLVED_CONFIG_FILE), &cfg.to_toml()?)?;

    let mut summary = String::from("seed,greedy_action,expected_return\n");
    let mut at_aa = 0;
    let stdout = std::io::stdout();
    for seed in 0..seeds {
        let r = train_seed(&exp, seed, &dir)?;
        let tables = r
            .final_eval
            .tables
            .as_ref()
            .ok_or_else(|| Error::InvalidEnv("reproduce-matrix needs a matrix game".into()))?;
        let greedy = action_label(&tables.per_state[0].greedy);
        if greedy == "A-A" {
            at_aa += 1;
        }
        let dump = qtable_dump(
            tables,
            &[("algorithm", exp.algorithm.label()), ("seed", seed.to_string())],
        );
        write_file(&dir.join(format!("qtables_{seed}.txt")), &dump)?;
        let mut lock = stdout.lock();
        let _ = writeln!(lock, "== {} seed {seed}", exp.algorithm.label());
        let _ = write!(lock, "{}", format_tables(tables));
        let _ = writeln!(lock, "seed {seed}: greedy {greedy}, expected return {:.4}", tables.expected_return);
        summary.push_str(&format!("{seed},{greedy},{}\n", tables.expected_return));
    }
    write_file(&dir.join("summary.csv"), &summary)?;
    println!(
        "{}: {at_aa}/{seeds} seeds at A-A, {} elsewhere",
        exp.algorithm.label(),
        seeds - at_aa
    );
    Ok(EXIT_OK)
}

/// Runs the suites and prints one JSON object with every report.
pub fn cmd_check(suite: &str, seed: u64) -> Result<i32> {
    let suites = Suite::parse(suite)?;
    let mut reports = Vec::with_capacity(suites.len());
    for s in suites {
        reports.push(s.run(seed)?);
    }
    let passed = reports.iter().all(|r| r.passed);
    let doc = serde_json::json!({ "passed": passed, "suites": reports });
    println!("{}", serde_json::to_string_pretty(&doc).expect("reports serialize"));
    Ok(if passed { EXIT_OK } else { EXIT_RUNTIME })
}

pub fn cmd_dump_qtable(checkpoint: &Path, env: &str) -> Result<i32> {
    let spec = EnvSpec::preset(env).resolve()?;
    let matrix = spec
        .as_matrix()
        .ok_or_else(|| Error::Config(format!("`{env}` is not a matrix game")))?;
    let (cfg, seed, model) = load_checkpoint(checkpoint)?;
    if spec.info()? != model.info {
        return Err(Error::Config(format!(
            "checkpoint was trained on a different environment than `{env}`"
        )));
    }
    let tables = matrix_tables(&model, &matrix)?;
    let dump = qtable_dump(
        &tables,
        &[
            ("algorithm", cfg.algorithm.label()),
            ("seed", seed.to_string()),
            ("env", env.to_string()),
        ],
    );
    print!("{dump}");
    Ok(EXIT_OK)
}
