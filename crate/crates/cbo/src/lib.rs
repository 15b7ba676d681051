//! Deadline-aware offloading of frame classification between an on-device
//! model and a remote server.
//!
//! The crate models a device that classifies every frame locally, estimates
//! how trustworthy each answer is, and decides which frames to re-send to a
//! stronger server model over a shared uplink before their deadlines expire.
//! It provides confidence calibration (`calibration`), an offline optimal
//! scheduler with an exhaustive cross-check (`optimal`), online policies
//! including the confidence-based planner (`policies`), a discrete-event
//! simulator (`simulator`), and the `cbo` command-line tool (`cli`).
//!
//! All scheduling arithmetic happens on a shared 1 ms integer grid
//! ([`time::TimeMs`]) so the solver, planner, and simulator agree exactly on
//! boundary feasibility.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod error;
pub mod optimal;
pub mod policies;
pub mod simulator;
pub mod time;
pub mod workload;

pub use error::{CboError, Result};
pub use time::TimeMs;
