//! Experiment orchestration: run configuration, checkpoints, CSV/SVG output
//! and the subcommands behind the `dice` binary.

mod checkpoint;
mod commands;
mod config;
mod io;
mod svg;

pub use checkpoint::{
    actor_checkpoint, actor_from_checkpoint, checksum, combined_checkpoint, combined_from_checkpoint,
    critic_checkpoint, critic_from_checkpoint, flow_checkpoint, flow_from_checkpoint, Block, Checkpoint,
    CheckpointKind, Finetuned, MAGIC, VERSION,
};
pub use commands::{
    analysis_threads, files, gen_demos, load_finetuned, run_analyze, run_evaluate, run_finetune, run_pipeline,
    run_pretrain, run_report, seed_dir, world, AnalysisOutputs, EvalReport, ExpertPolicy, PolicyChoice,
};
pub use config::{parse_config, AnalysisConfig, DemoConfig, RunConfig};
pub use io::{opt_cell, read_demos, write_demos, write_manifest, Table};
pub use svg::{line_chart, parse_paths, scatter_chart, Series};
