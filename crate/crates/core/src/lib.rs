//! Classification with costly features, solved as a sequential decision
//! problem with a deep Q-learning agent.
//!
//! The crate is organized around the pipeline: [`data`] loads and splits
//! datasets, [`env`] defines the acquisition MDP, [`net`] the dueling
//! Q-network, [`agent`] the learner, [`budget`] the Lagrange controller and
//! snapshot selection, and [`evalx`] the trade-off curves and baselines.
//! [`oracle`] solves tiny instances exactly for testing.

pub mod agent;
pub mod budget;
pub mod checkpoint;
pub mod data;
pub mod env;
pub mod net;
pub mod evalx;
pub mod oracle;
