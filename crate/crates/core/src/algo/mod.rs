//! Algorithm selection, training objectives and the condition-chain checker.

mod condition;
mod losses;
mod spec;

pub use condition::{
    condition_chain_check, decentralization_conditions, table_argmax, ChainReport, ChainViolation,
    DecentralizationConditions, HeadReport,
};
pub use losses::{
    accumulate_gradients, build_losses, combined_loss, nopt_eq3_terms, nopt_qtranpp_terms, opt_terms,
    LossBreakdown, LossGraph,
};
pub use spec::{Ablation, AlgorithmSpec, Family, HeadMode};
