//! Joint-level whole-body teleoperation.
//!
//! A leader device (synthetic, replayed or a browser console) streams
//! [`transport::StateFrame`]s over UDP. The follower side keeps the newest
//! frame in a latest-value cell, runs the [`session`] state machine, maps
//! joints with [`retarget`], turns a joystick leg into base velocities with
//! [`locomotion`], computes leader [`feedback`] torques and advances the
//! kinematic [`follower_sim`].

pub mod bridge;
pub mod clock;
pub mod config;
pub mod feedback;
pub mod follower_sim;
pub mod leader_source;
pub mod locomotion;
pub mod node;
pub mod retarget;
pub mod session;
pub mod transport;
