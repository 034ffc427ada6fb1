//! Full runs, configuration and the experiment harness.

mod config;
mod harness;
mod run;

pub use config::{Preset, RunConfig, Settings};
pub use harness::{
    gap_curves, masking_accuracy_audit, mean_argmax_tau, selection_matches, sweep, synthesize, AuditCase, AuditEntry,
    AuditReport, GapCurve, GapCurves, NamedImage, SweepFailure, SweepRow, SweepSpec, SweepTable, SWEEP_HEADER,
};
pub use run::{run_baseline, run_fixed, run_mash, warmup, InputInfo, RunReport, TrainingTrace};
