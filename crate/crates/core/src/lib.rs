//! Repeated reference games between an evaluated agent and a simulated
//! interlocutor, with the measurements used to study in-context
//! conversational adaptation.
//!
//! The crate is organised around the game's data model ([`model`]):
//!
//! * [`corpus`] loads recorded interactions and generates synthetic ones,
//! * [`promptkit`] turns game state into prompts for each variant,
//! * [`agents`] talks to models, replays recordings and runs scripted agents,
//! * [`engine`] plays full games and persists transcripts,
//! * [`metrics`] and [`stats`] measure the results.

pub mod agents;
pub mod corpus;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod promptkit;
pub mod seed;
pub mod stats;
