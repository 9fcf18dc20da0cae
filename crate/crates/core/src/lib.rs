//! Day/night training of a latent-imagination agent.
//!
//! A discrete-latent recurrent world model is learned from a limited amount
//! of real experience (the *day*), after which a PPO actor-critic keeps
//! training purely on imagined trajectories that start from random latent
//! states and are perturbed by dream-like augmentations (the *night*).

pub mod agent;
pub mod config;
pub mod dreaming;
pub mod encodings;
pub mod envs;
pub mod error;
pub mod nn;
pub mod orchestrator;
pub mod replay;
pub mod rng;
pub mod worldmodel;

pub use error::{Error, Result};
