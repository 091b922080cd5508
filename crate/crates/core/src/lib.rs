//! Simulation of peer-assisted video-on-demand over set-top boxes.
//!
//! Videos are cut into stripes, replicated across box storage, and served by
//! box uploads. The crate provides allocation schemes, a centralized max-flow
//! scheduler, the distributed request protocol, adversarial request
//! generators, a tick-based engine and closed-form bounds.

pub mod adversary;
pub mod allocation;
pub mod bounds;
pub mod configfile;
pub mod distributed;
pub mod engine;
pub mod experiment;
pub mod flow;
pub mod maxflow;
pub mod metrics;
pub mod model;
pub mod state;
