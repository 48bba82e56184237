//! Experiment harness: configuration files, multi-seed training runs,
//! evaluation with and without a tank, and cross-run comparison.

mod compare;
mod config;
mod eval;
mod run;

pub use compare::{compare, Comparison, EpochRow, RunData, SeedData, PLATEAU_EPOCHS};
pub use config::{ExperimentConfig, WrapperSpec, CONFIG_VERSION, DEFAULT_EVAL_EPISODES};
pub use eval::{
    estimate_task_energy, evaluate, EpisodeEval, EvalReport, EvalTank, StepRow, FINAL_WINDOW_STEPS,
};
pub use run::{
    run_dir, runs_root, train_experiment, training_env, SeedRun, TrainRun, MANIFEST_FORMAT,
    RUNS_DIR_ENV,
};
