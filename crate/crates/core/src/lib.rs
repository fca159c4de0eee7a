//! Agent-driven analog circuit sizing engine.
//!
//! Layers, bottom up:
//! - [`netlist`]: SPICE-subset parser, circuit IR, parameter binding and matching.
//! - [`simulator`]: square-law MNA engine (DC, AC, transient).
//! - [`metrics`]: performance extraction and figure of merit.
//! - [`optimizer`]: Gaussian-process Bayesian optimization and differential evolution.
//! - [`pipeline`]: the simulation tools agents call (`dc_sim`, `full_sim`).
//! - [`llmclient`]: chat backends (HTTP and scripted) and context assembly.
//! - [`trace`]: append-only event log, accounting and report rendering.
//! - [`orchestrator`]: the four-phase agent workflow.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod llmclient;
pub mod metrics;
pub mod netlist;
pub mod optimizer;
pub mod orchestrator;
pub mod pipeline;
pub mod simulator;
pub mod testbench;
pub mod trace;

pub use metrics::{Metric, MetricReport, Spec};
pub use netlist::{Circuit, MatchingGroup, ParameterSpace, Point};
pub use simulator::{DcSolution, ModelSet, MosModelCard};
