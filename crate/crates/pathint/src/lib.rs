//! Sampling-based stochastic optimal control.
//!
//! The crate simulates controlled diffusions whose noise enters through
//! the control channel, reweights batches of sampled trajectories with
//! an exact likelihood ratio between sampling and nominal path
//! distributions, and turns that machinery into a receding-horizon
//! controller that plans by averaging thousands of perturbed rollouts.
//! An iLQG trajectory optimizer is included as the classical baseline,
//! together with three benchmark plants (cart-pole, race car, quadrotor
//! in an obstacle forest) and an experiment harness.
//!
//! Start with the guide in `book/` for the concepts, or jump to
//! [`mppi`] for the controller and [`envs`] for the plants.

pub mod ddp;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod likelihood;
pub mod lq;
pub mod mppi;
pub mod rng;
pub mod state;
pub mod task;
pub mod verify;

pub use error::{Error, Result};
pub use state::StateVector;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
}
