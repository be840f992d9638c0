//! Discrete-event simulator and security-requirement checker for EV-charging
//! protocols.
//!
//! A scenario file describes actors, links, credentials, attackers and a list
//! of protocol steps. [`flows::run`] executes it into a hash-chained
//! [`trace::Trace`], and [`verdict::check_all`] grades the nine security
//! requirements from that trace alone.

pub mod adversary;
pub mod channel;
pub mod cli;
pub mod crypto;
pub mod envelope;
pub mod flows;
pub mod model;
pub mod trace;
pub mod verdict;
