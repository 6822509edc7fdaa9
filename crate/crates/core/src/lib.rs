//! Tail-risk meta-learning.
//!
//! A small reverse-mode autodiff engine drives MAML and conditional neural
//! process learners; training is a two-stage game in which a leader screens
//! the high-loss tail of each task batch (Monte Carlo or kernel quantile
//! estimates) and a follower descends on the reweighted risk.

pub mod autodiff;
pub mod eval;
pub mod meta;
pub mod params;
pub mod risk;
pub mod tasks;
