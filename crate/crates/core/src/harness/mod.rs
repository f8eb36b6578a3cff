//! Episode collection, training loop, evaluation and metrics output.

mod buffer;
mod eval;
mod run;

pub use buffer::{EpisodeBuffer, ExplorationSchedule};
pub use eval::{
    action_label, evaluate, format_tables, matrix_tables, mean_std, qtable_dump, ContextTables, Evaluation,
    MatrixTables, StateTables,
};
pub use run::{
    collect_episode, read_metrics, run_seed, write_metrics, Experiment, MetricsRecord, RunConfig, RunResult,
    METRICS_COLUMNS,
};
