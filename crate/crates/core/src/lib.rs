//! Desk-scale simulation of remote entity authentication with optical
//! physical unclonable functions.
//!
//! A disordered optical token answers parameterized light challenges with a
//! speckle pattern ([`puf`]); classical processing turns the speckle into a
//! stable near-uniform key and a 4-digit PIN ([`keys`]). A one-time
//! manufacturer step ([`enroll`]) hands the user a token and PIN and the
//! verifier a database of XOR-masked challenge-response rows. Verification
//! ([`protocol`]) runs a local PIN check followed by a one-time-pad token
//! authentication over a framed wire protocol ([`wire`]); every database
//! row is consumed the moment it is served. The [`adversary`] module
//! replays the threat model against the real protocol and measures what an
//! attacker actually achieves.

pub mod adversary;
pub mod bits;
pub mod config;
pub mod enroll;
pub mod exec;
pub mod hex;
pub mod keys;
pub mod protocol;
pub mod puf;
pub mod stats;
pub mod wire;

pub use config::{Config, GridSpec};
pub use enroll::{CrpDatabase, EnrollmentOutput};
pub use keys::{Key, Pin};
pub use puf::{LightParams, NoiseModel, SpecklePattern, TokenDisorder};
pub use wire::Message;
