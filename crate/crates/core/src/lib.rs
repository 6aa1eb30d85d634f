//! Routed geometric credit assignment for structured-output policies.
//!
//! A policy emits a JSON object with four geometric fields. Each field is
//! scored on its own, rewards are standardized within a group of rollouts,
//! and each field's advantage is routed to exactly the tokens that produced
//! it. Tokens outside every field share a background advantage that mixes
//! the field advantages with a reprojection-consistency term.
//!
//! Modules, bottom up:
//! - [`geometry`]: boxes, IoU, containment, pinhole projection, quantization
//! - [`schema`]: span-preserving parse and canonical serialization
//! - [`spans`]: character-to-token alignment and the token partition
//! - [`credit`]: field rewards, group standardization, routing
//! - [`objective`]: clipped surrogate and gradient-variance estimators
//! - [`simulator`]: synthetic scenes, a tabular policy and the training loop
//! - [`commands`]: the operations behind the command-line tool

pub mod commands;
pub mod credit;
pub mod geometry;
pub mod objective;
pub mod schema;
pub mod simulator;
pub mod spans;
