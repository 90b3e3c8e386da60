//! Discrete-event model of the tufting work cell: machine, creel,
//! substrate, product and operator.
//!
//! The machine is reduced to a status, a shaft speed and a single tool
//! phase angle. Faults either follow directly from an operator action or
//! are injected by the scenario and latched until they manifest.

mod cell;
mod model;

pub use cell::{ConfigError, InitialState, MachineConfig, SubstrateSpec, WorkCell, WorkCellState};
pub use model::*;

use crate::petri::{GuardContext, GuardRegistry};

fn status_is(ctx: &GuardContext<'_>, status: &str) -> bool {
    ctx.snapshot.pointer("/machine/status").and_then(|v| v.as_str()) == Some(status)
}

/// Named guards over the work-cell context for activity definitions.
///
/// * `machine_stopped`: the shaft is not running.
/// * `controls_unlocked`: no interlock is engaged.
/// * `setup_complete`: every required slot is ready for production.
pub fn guards() -> GuardRegistry {
    GuardRegistry::new()
        .with("machine_stopped", |c: &GuardContext<'_>| !status_is(c, "Run"))
        .with("controls_unlocked", |c: &GuardContext<'_>| {
            c.snapshot.pointer("/machine/interlocked") == Some(&serde_json::Value::Bool(false))
        })
        .with("setup_complete", |c: &GuardContext<'_>| {
            c.snapshot.pointer("/setup_complete") == Some(&serde_json::Value::Bool(true))
        })
}
