//! Acceptance criteria, run in order in one process. Prints one line per
//! criterion and exits non-zero if any fails. Positional arguments select
//! criteria by number (`cargo test --test acceptance -- 4 9`).

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use factorq::algo::{AlgorithmSpec, Family};
use factorq::checks::Suite;
use factorq::config::load_checkpoint;
use factorq::env::{EnvSpec, MatrixGameSpec, MatrixState};
use factorq::harness::{
    action_label, collect_episode, matrix_tables, mean_std, qtable_dump, run_seed, Experiment, MatrixTables,
};
use factorq::rng::{stream_rng, Stream};
use factorq_cli::{checkpoint_path, metrics_path, reproduce_experiment, train_seed, REPRODUCE_STEPS};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

fn suite(s: Suite) -> Outcome {
    let t = Instant::now();
    let r = s.run(0).expect("suite runs");
    let el = t.elapsed();
    let fast = el < Duration::from_secs(60);
    outcome(
        r.passed && fast,
        format!(
            "{}: worst {:.3e}, threshold {:.0e}, {} instances in {} cases, {:.1}s{}",
            r.metric,
            r.worst(),
            r.threshold,
            r.cases.iter().map(|c| c.instances).sum::<usize>(),
            r.cases.len(),
            el.as_secs_f64(),
            r.failures.first().map_or(String::new(), |f| format!(", first failure: {f}"))
        ),
    )
}

/// Final tables and wall time of one reproduce-matrix seed.
struct SeedRun {
    seed: u64,
    tables: MatrixTables,
    secs: f64,
}

impl SeedRun {
    fn greedy(&self) -> String {
        action_label(&self.tables.contexts[0].greedy)
    }

    fn at_aa(&self) -> bool {
        self.tables.contexts.iter().all(|c| c.greedy == [0, 0])
    }
}

fn reproduce(family: Family, seeds: u64) -> Vec<SeedRun> {
    let exp = reproduce_experiment(family, REPRODUCE_STEPS);
    (0..seeds)
        .map(|seed| {
            let t = Instant::now();
            let r = run_seed(&exp, seed, |_| Ok(())).expect("run");
            SeedRun {
                seed,
                tables: r.final_eval.tables.expect("matrix tables"),
                secs: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn qtranpp_runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| reproduce(Family::Qtranpp, 20))
}

fn worst_secs(runs: &[SeedRun]) -> f64 {
    runs.iter().map(|r| r.secs).fold(0.0, f64::max)
}

fn vdn_table() -> Outcome {
    let runs = reproduce(Family::Vdn, 10);
    let want = [2.0, 1.5, 1.5, 1.0];
    let mut ok = 0;
    let mut worst_dev = 0.0f64;
    for r in &runs {
        let q = &r.tables.contexts[0].q_jt;
        let dev = q.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_dev = worst_dev.max(dev);
        if dev <= 0.1 && r.at_aa() {
            ok += 1;
        }
    }
    let secs = worst_secs(&runs);
    outcome(
        ok >= 9 && secs <= 300.0,
        format!("{ok}/10 seeds within 0.1 and at A-A, worst deviation {worst_dev:.3}, slowest seed {secs:.0}s"),
    )
}

fn qtranpp_optimality() -> Outcome {
    let runs = &qtranpp_runs()[..10];
    let mut ok = 0;
    let mut lines = Vec::new();
    for r in runs {
        let viol = r.tables.mean_violation_per_head();
        let good = r.at_aa() && viol.iter().all(|v| *v < 0.05);
        ok += usize::from(good);
        lines.push(format!("s{}:{}:{:.3}", r.seed, r.greedy(), viol.iter().fold(0.0f64, |a, b| a.max(*b))));
    }
    let secs = worst_secs(runs);
    let at_aa = runs.iter().filter(|r| r.at_aa()).count();
    outcome(
        ok >= 9 && secs <= 600.0,
        format!(
            "{ok}/10 seeds at A-A with every head's mean violation < 0.05 ({at_aa}/10 at A-A); \
             seed:greedy:worst-head violation {}; slowest seed {secs:.0}s",
            lines.join(" ")
        ),
    )
}

fn qmix_bimodality() -> Outcome {
    let qmix = reproduce(Family::Qmix, 20);
    let qpp = qtranpp_runs();
    for (a, b) in qmix.iter().zip(qpp) {
        println!(
            "    seed {:>2}: qmix {} (return {:.2}), qtranpp {} (return {:.2})",
            a.seed,
            a.greedy(),
            a.tables.expected_return,
            b.greedy(),
            b.tables.expected_return
        );
    }
    let f_qmix = qmix.iter().filter(|r| r.at_aa()).count();
    let f_qpp = qpp.iter().filter(|r| r.at_aa()).count();
    let secs = worst_secs(&qmix).max(worst_secs(qpp));
    outcome(
        f_qmix <= f_qpp && secs <= 600.0,
        format!("A-A fraction qmix {f_qmix}/20, qtranpp {f_qpp}/20, slowest seed {secs:.0}s"),
    )
}

fn random_game(index: u64) -> MatrixGameSpec {
    let mut rng = stream_rng(1000 + index, Stream::Init);
    let states = (0..2)
        .map(|_| MatrixState {
            probability: 0.5,
            payoff: (0..9).map(|_| rng.gen_range(0.0..4.0)).collect(),
        })
        .collect();
    MatrixGameSpec {
        num_agents: 2,
        actions_per_agent: 3,
        states,
        state_observable: false,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn violation_descent() -> Outcome {
    const STEPS: u64 = 3_000;
    let mut ok = 0;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for game in 0..20 {
        let t = Instant::now();
        let spec = random_game(game);
        let mut exp = Experiment::new(EnvSpec::Matrix(spec.clone()), AlgorithmSpec::new(Family::Qtranpp));
        exp.run.total_env_steps = STEPS;
        exp.run.evaluation_interval = STEPS;
        exp.run.exploration.anneal_steps = STEPS / 2;
        let before = mean(&matrix_tables(&exp.build_model(game).unwrap(), &spec).unwrap().mean_violation_per_head());
        let r = run_seed(&exp, game, |_| Ok(())).expect("run");
        let after = mean(&r.final_eval.tables.expect("tables").mean_violation_per_head());
        ok += usize::from(after < before);
        worst = worst.max(t.elapsed().as_secs_f64());
        lines.push(format!("{before:.3}->{after:.3}"));
    }
    outcome(
        ok >= 18 && worst <= 180.0,
        format!("{ok}/20 games reduced violation [{}], slowest game {worst:.0}s", lines.join(" ")),
    )
}

fn grid_learning() -> Outcome {
    let t = Instant::now();
    let mut exp = Experiment::new(EnvSpec::preset("grid-4x4"), AlgorithmSpec::new(Family::Qtranpp));

    // Uniform-random policy oracle first.
    let model = exp.build_model(0).unwrap();
    let mut env = exp.env.build().unwrap();
    let mut env_rng = stream_rng(0, Stream::EvalEnv);
    let mut explore = stream_rng(0, Stream::Exploration);
    let returns: Vec<f64> = (0..500)
        .map(|_| {
            collect_episode(env.as_mut(), &model, 1.0, &mut env_rng, Some(&mut explore))
                .unwrap()
                .total_reward()
        })
        .collect();
    let (base, sd) = mean_std(&returns);

    exp.run.total_env_steps = 10_000;
    exp.run.exploration.anneal_steps = 5_000;
    exp.run.evaluation_interval = 10_000;
    let r = run_seed(&exp, 0, |_| Ok(())).expect("run");
    let got = r.final_eval.mean_return;
    let el = t.elapsed();
    outcome(
        got >= base + 3.0 * sd && el <= Duration::from_secs(900),
        format!(
            "final return {got:.3} vs random {base:.3} + 3 x {sd:.3} = {:.3}, {:.1} min",
            base + 3.0 * sd,
            minutes(el)
        ),
    )
}

fn determinism() -> Outcome {
    let mut notes = Vec::new();
    let mut passed = true;
    let nondec = {
        let mut e = Experiment::new(EnvSpec::preset("nondec-2x2"), AlgorithmSpec::new(Family::Qtranpp));
        e.run.total_env_steps = 400;
        e.run.evaluation_interval = 100;
        e
    };
    let grid = {
        let mut e = Experiment::new(EnvSpec::preset("grid-4x4"), AlgorithmSpec::new(Family::Qmix));
        e.run.total_env_steps = 300;
        e.run.evaluation_interval = 100;
        e.run.evaluation_episodes = 4;
        e.run.batch_size = 4;
        e
    };
    let read = |p: &Path| std::fs::read(p).unwrap();
    for (name, exp) in [("nondec-2x2", nondec), ("grid-4x4", grid)] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = train_seed(&exp, 3, a.path()).unwrap();
        train_seed(&exp, 3, b.path()).unwrap();
        let same = read(&metrics_path(a.path(), 3)) == read(&metrics_path(b.path(), 3));
        passed &= same;
        notes.push(format!("{name} metrics identical: {same}"));
        if let Some(spec) = exp.env.as_matrix() {
            let (_, seed, model) = load_checkpoint(&checkpoint_path(a.path(), 3)).unwrap();
            let header = [("seed", seed.to_string())];
            let live = qtable_dump(&matrix_tables(&ra.model, &spec).unwrap(), &header);
            let loaded = qtable_dump(&matrix_tables(&model, &spec).unwrap(), &header);
            passed &= live == loaded;
            notes.push(format!("{name} dump after reload identical: {}", live == loaded));
        }
    }
    outcome(passed, notes.join(", "))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient fidelity", || suite(Suite::Grad)),
        (2, "monotonicity", || suite(Suite::Mono)),
        (3, "decentralization theorem", || suite(Suite::Theorem1)),
        (4, "vdn table reproduction", vdn_table),
        (5, "qtranpp optimality", qtranpp_optimality),
        (6, "qmix bimodality", qmix_bimodality),
        (7, "denser nopt signal", || suite(Suite::Signal)),
        (8, "violation descent", violation_descent),
        (9, "grid learning", grid_learning),
        (10, "determinism and round trips", determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {tag} {name}: {} [{:.1} min]", o.detail, minutes(t.elapsed()));
        if !o.passed {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
