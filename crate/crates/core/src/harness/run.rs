use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{EpisodeBuffer, ExplorationSchedule};
use super::eval::{evaluate, Evaluation};
use crate::algo::{accumulate_gradients, AlgorithmSpec, LossBreakdown};
use crate::autodiff::{GruState, RmsProp};
use crate::env::{EnvSpec, Environment};
use crate::episode::{Episode, EpisodeBatch};
use crate::error::{Error, Result};
use crate::nets::{masked_argmax, Architecture, FactoredModel, NetworkConfig};
use crate::rng::{stream_rng, SimRng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub total_env_steps: u64,
    /// Train once every this many collected episodes.
    pub train_interval: u64,
    /// Env steps between evaluations.
    pub evaluation_interval: u64,
    pub evaluation_episodes: usize,
    /// Act uniformly at random for the whole run (ε = 1).
    pub full_exploration: bool,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub exploration: ExplorationSchedule,
    pub optimizer: RmsProp,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            total_env_steps: 50_000,
            train_interval: 1,
            evaluation_interval: 1_000,
            evaluation_episodes: 32,
            full_exploration: false,
            batch_size: 32,
            buffer_capacity: 5_000,
            exploration: ExplorationSchedule::default(),
            optimizer: RmsProp::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_interval", self.train_interval),
            ("evaluation_interval", self.evaluation_interval),
            ("batch_size", self.batch_size as u64),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("evaluation_episodes", self.evaluation_episodes as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("run.{name} must be >= 1")));
            }
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::Config(format!(
                "run.batch_size {} exceeds run.buffer_capacity {}",
                self.batch_size, self.buffer_capacity
            )));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.decay) && o.eps > 0.0) {
            return Err(Error::Config(format!("bad optimizer settings {o:?}")));
        }
        self.exploration.validate()
    }

    pub fn epsilon(&self, env_steps: u64) -> f64 {
        if self.full_exploration {
            1.0
        } else {
            self.exploration.value(env_steps)
        }
    }
}

/// Everything one seed of one experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub env: EnvSpec,
    pub algorithm: AlgorithmSpec,
    pub network: NetworkConfig,
    pub run: RunConfig,
}

impl Experiment {
    pub fn new(env: EnvSpec, algorithm: AlgorithmSpec) -> Self {
        Self {
            env,
            algorithm,
            network: NetworkConfig::default(),
            run: RunConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.algorithm.validate()?;
        self.network.validate()?;
        self.run.validate()
    }

    pub fn run_id(&self) -> String {
        let env = match &self.env {
            EnvSpec::Preset { name } => name.as_str(),
            EnvSpec::Matrix(_) => "matrix",
            EnvSpec::Grid(_) => "grid",
        };
        format!("{}_{}", self.algorithm.label(), env)
    }

    pub fn build_model(&self, seed: u64) -> Result<FactoredModel<f64>> {
        let info = self.env.info()?;
        let mut rng = stream_rng(seed, Stream::Init);
        FactoredModel::new(Architecture::for_spec(&self.algorithm), self.network, info, &mut rng)
    }
}

/// Roll out one episode. Each agent acts greedily on its utilities with
/// probability `1 - epsilon`, otherwise uniformly among its available actions.
/// `explore` is only drawn from when `epsilon > 0`.
pub fn collect_episode<T: Scalar>(
    env: &mut dyn Environment,
    model: &FactoredModel<T>,
    epsilon: f64,
    env_rng: &mut SimRng,
    mut explore: Option<&mut SimRng>,
) -> Result<Episode> {
    let info = env.info();
    let mut step = env.reset(env_rng);
    let mut episode = Episode::start(&step);
    let mut hidden = GruState::zeros(info.n_agents, model.net.hidden_dim);
    let uniform = epsilon >= 1.0;
    if epsilon > 0.0 && explore.is_none() {
        return Err(Error::invalid("collect_episode", "epsilon > 0 needs an exploration rng"));
    }
    for _ in 0..info.episode_limit {
        let q = if uniform { None } else { Some(model.act_q(&step.observations, &mut hidden)?) };
        let mut actions = Vec::with_capacity(info.n_agents);
        for (i, mask) in step.available_actions.iter().enumerate() {
            let random = match explore.as_deref_mut() {
                Some(r) if epsilon > 0.0 => uniform || r.gen::<f64>() < epsilon,
                _ => false,
            };
            let a = if random {
                let allowed: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
                if allowed.is_empty() {
                    return Err(Error::NoAvailableAction(i));
                }
                let r = explore.as_deref_mut().expect("checked above");
                allowed[r.gen_range(0..allowed.len())]
            } else {
                let q = q.as_ref().expect("greedy branch has q");
                masked_argmax(&q[i], mask).ok_or(Error::NoAvailableAction(i))?
            };
            actions.push(a);
        }
        step = env.step(&actions, env_rng)?;
        episode.push(actions, &step);
        if step.terminated {
            break;
        }
    }
    Ok(episode)
}

/// One row of `metrics_{seed}.csv`. Loss columns average the train steps
/// since the previous row and are NaN until training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub epsilon: f64,
    pub l_td: f64,
    pub l_opt: f64,
    pub l_nopt: f64,
    pub total_loss: f64,
    pub eval_return: f64,
    pub greedy_action: String,
    pub viol_eq_ab: f64,
    pub viol_gt_ac: f64,
    pub viol_gt_cd: f64,
    pub viol_gt_ad: f64,
}

pub const METRICS_COLUMNS: [&str; 15] = [
    "run_id",
    "seed",
    "env_steps",
    "episodes",
    "epsilon",
    "l_td",
    "l_opt",
    "l_nopt",
    "total_loss",
    "eval_return",
    "greedy_action",
    "viol_eq_ab",
    "viol_gt_ac",
    "viol_gt_cd",
    "viol_gt_ad",
];

#[derive(Default)]
struct LossMean {
    n: f64,
    td: f64,
    opt: f64,
    nopt: f64,
    total: f64,
}

impl LossMean {
    fn add(&mut self, b: &LossBreakdown) {
        self.n += 1.0;
        self.td += b.l_td;
        self.opt += b.l_opt;
        self.nopt += b.l_nopt;
        self.total += b.total;
    }

    fn take(&mut self) -> [f64; 4] {
        let out = if self.n == 0.0 {
            [f64::NAN; 4]
        } else {
            [self.td / self.n, self.opt / self.n, self.nopt / self.n, self.total / self.n]
        };
        *self = LossMean::default();
        out
    }
}

/// Outcome of one seed.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub model: FactoredModel<f64>,
    pub records: Vec<MetricsRecord>,
    pub final_eval: Evaluation,
    pub train_steps: u64,
}

/// Train one seed. `on_record` sees every metrics row as it is produced.
pub fn run_seed(
    exp: &Experiment,
    seed: u64,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<RunResult> {
    exp.validate()?;
    let run = &exp.run;
    let env_spec = exp.env.resolve()?;
    let mut env = env_spec.build()?;
    let mut model = exp.build_model(seed)?;
    let mut env_rng = stream_rng(seed, Stream::Env);
    let mut explore_rng = stream_rng(seed, Stream::Exploration);
    let mut sample_rng = stream_rng(seed, Stream::Sampling);
    let mut eval_rng = stream_rng(seed, Stream::EvalEnv);
    let mut buffer = EpisodeBuffer::new(run.buffer_capacity)?;
    let run_id = exp.run_id();

    let (mut env_steps, mut episodes, mut train_steps) = (0u64, 0u64, 0u64);
    let mut losses = LossMean::default();
    let mut records = Vec::new();
    let mut record = |model: &FactoredModel<f64>,
                      env_steps: u64,
                      episodes: u64,
                      losses: &mut LossMean,
                      eval_rng: &mut SimRng,
                      records: &mut Vec<MetricsRecord>|
     -> Result<Evaluation> {
        let ev = evaluate(model, &env_spec, run.evaluation_episodes, eval_rng)?;
        let [l_td, l_opt, l_nopt, total_loss] = losses.take();
        let r = MetricsRecord {
            run_id: run_id.clone(),
            seed,
            env_steps,
            episodes,
            epsilon: run.epsilon(env_steps),
            l_td,
            l_opt,
            l_nopt,
            total_loss,
            eval_return: ev.mean_return,
            greedy_action: ev.greedy_action.clone(),
            viol_eq_ab: ev.violation.eq_ab,
            viol_gt_ac: ev.violation.gt_ac,
            viol_gt_cd: ev.violation.gt_cd,
            viol_gt_ad: ev.violation.gt_ad,
        };
        on_record(&r)?;
        records.push(r);
        Ok(ev)
    };

    let mut last = record(&model, 0, 0, &mut losses, &mut eval_rng, &mut records)?;
    let mut next_eval = run.evaluation_interval;
    while env_steps < run.total_env_steps {
        let eps = run.epsilon(env_steps);
        let ep = collect_episode(env.as_mut(), &model, eps, &mut env_rng, Some(&mut explore_rng))?;
        env_steps += ep.len() as u64;
        episodes += 1;
        buffer.push(ep);
        if buffer.len() >= run.batch_size && episodes % run.train_interval == 0 {
            let picked = buffer.sample(run.batch_size, &mut sample_rng)?;
            let batch = EpisodeBatch::from_episodes(&model.info, &picked)?;
            let b = accumulate_gradients(&mut model, &batch, &exp.algorithm, &mut sample_rng)?;
            run.optimizer.step(&mut model.params)?;
            losses.add(&b);
            train_steps += 1;
            if train_steps % exp.algorithm.target_update_period as u64 == 0 {
                model.sync_target()?;
            }
        }
        if env_steps >= next_eval {
            last = record(&model, env_steps, episodes, &mut losses, &mut eval_rng, &mut records)?;
            while next_eval <= env_steps {
                next_eval += run.evaluation_interval;
            }
        }
    }
    if records.last().map(|r| r.env_steps) != Some(env_steps) {
        last = record(&model, env_steps, episodes, &mut losses, &mut eval_rng, &mut records)?;
    }
    Ok(RunResult {
        seed,
        model,
        records,
        final_eval: last,
        train_steps,
    })
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let io = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    if records.is_empty() {
        w.write_record(METRICS_COLUMNS).map_err(io)?;
    }
    for r in records {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let io = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut rd = csv::Reader::from_path(path).map_err(io)?;
    let header: Vec<String> = rd.headers().map_err(io)?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(Error::Config(format!("{}: unexpected columns {header:?}", path.display())));
    }
    rd.deserialize().map(|r| r.map_err(io)).collect()
}
