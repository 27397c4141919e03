//! Entity-transformer policies for a deterministic micro-RTS grid game.
//!
//! The crate bundles the game engine, scripted opponents, a small
//! reverse-mode autodiff library, the transformer policy with masked
//! factorized actions, PPO, and the training/evaluation harness.

pub mod engine;
pub mod numerics;
pub mod policy;
pub mod ppo;
pub mod scripted_ai;
pub mod harness;
