//! Experiment harness: configuration, built-in scenarios, the pipeline
//! stages and the run manifest.

mod config;
mod pipeline;
mod scenarios;
mod stages;

pub use config::{
    CollectionConfig, CostConfig, EvaluationConfig, ExperimentConfig, OfflineConfig, OnlineConfig, PatternRegions, Policy, QuantizerConfig,
    TestingActionConfig, STANDARD_CW,
};
pub use pipeline::{file_hash, input_hash, is_fresh, plan, run_pipeline, run_stage, Manifest, Outcome, Stage, StageEntry};
pub use scenarios::{builtin_interference, builtin_scenario, builtin_timing, pattern_tasks, universal_tasks, BUILTIN_SCENARIOS};
pub use stages::{
    collect, derive_seed, evaluate, experiment_layout, load_policy, load_region_models, pattern_actives, pattern_costs, policy_space,
    qnet_config, quantize, seed_states,
    read_dataset, read_eval_summary, read_online_summary, run_edca, run_policy, train_imitators, train_offline, train_online,
    EvalSummaryRow, LiveScenario, OnlineSummaryRow, RunDir,
};
