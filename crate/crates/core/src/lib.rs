//! State estimation and transmission-power co-design over multi-hop wireless
//! networks with fading channels.
//!
//! A linear plant is observed by sensors whose measurements travel to a
//! central estimator through a layered relay network. Each relay hop adds a
//! unit delay and every link drops packets at random. The toolkit
//!
//! * builds the exact finite Markov chain of measurement-delivery outcomes
//!   implied by the network topology and per-link success probabilities
//!   ([`markov`]),
//! * synthesizes a steady-state jump estimator with a bounded number of
//!   stored gains ([`synthesis`]),
//! * co-designs per-node transmission-power policies that minimize a power
//!   budget subject to an estimation-performance ceiling ([`codesign`]), and
//! * validates every prediction with a reproducible Monte Carlo simulator
//!   ([`simulate`]).
//!
//! The `hopfilter` binary exposes the pipeline as subcommands driven by a
//! JSON configuration file; see the crate README for the schema.

pub mod channel;
pub mod cli;
pub mod codesign;
pub mod config;
pub mod io;
pub mod linalg;
pub mod markov;
pub mod model;
pub mod quad;
pub mod simulate;
pub mod synthesis;
pub mod topology;

/// Errors produced by configuration parsing, model validation and design.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {name}: expected {expected}, got {got}")]
    Dimension {
        name: &'static str,
        expected: String,
        got: String,
    },
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0} literals exceed the enumeration cap of {1}; shrink the delay window or the topology")]
    EnumerationCap(usize, usize),
    #[error("state count {0} exceeds the cap of {1}")]
    StateCap(u128, usize),
    #[error("Markov chain is not ergodic: {0}")]
    NotErgodic(String),
    #[error("design infeasible: {0}")]
    Infeasible(String),
    #[error("quadrature did not converge for {0}")]
    Quadrature(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
