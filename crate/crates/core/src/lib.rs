//! Monte Carlo laboratory for boundary-case branching random walks with
//! stable-domain steps.

pub mod brw;
pub mod error;
pub mod harness;
pub mod offspring;
pub mod rng;
pub mod special;
pub mod spine;
pub mod stable_laws;
pub mod stats;
pub mod walk_lab;

pub use error::{LabError, Result};
