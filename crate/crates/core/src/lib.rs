//! Concept-driven indoor navigation in procedurally generated houses.
//!
//! The crate covers the whole loop: labeled house generation ([`procgen`]),
//! occupancy and shortest-path fields ([`spatial`]), a CPU renderer
//! ([`render`]), the RoomNav episodic task ([`env`]), a small reverse-mode
//! tensor library ([`nn`]), gated-attention agents trained with DDPG and A3C
//! ([`agents`]) and evaluation/benchmark tooling ([`harness`]).

pub mod agents;
pub mod env;
pub mod harness;
pub mod nn;
pub mod procgen;
pub mod render;
pub mod scene;
pub mod spatial;
