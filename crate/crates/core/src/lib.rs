//! Active-perception simulator: a camera-bearing agent picks viewpoints on a
//! marker-anchored virtual grid until it can answer a query about a tabletop
//! scene.
//!
//! The crate is organized bottom-up:
//!
//! * [`geom`]: transforms, quaternions and the pinhole model;
//! * [`grid`]: the virtual grid and its image overlay;
//! * [`scene`] and [`render`]: the simulated world and the images shown to agents;
//! * [`actionspace`]: the eight action spaces;
//! * [`agent`]: analyzer and policy contracts plus built-in agents;
//! * [`exploration`]: the episode loop and its replayable log;
//! * [`metrics`] and [`experiment`]: trial metrics, reports and the harness;
//! * [`vlmclient`]: a remote chat-completions agent.

pub mod actionspace;
pub mod agent;
pub mod experiment;
pub mod exploration;
pub mod geom;
pub mod grid;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod vlmclient;
