//! Privacy-preserving location sharing between vehicles.
//!
//! A social network server knows identities and friendships but never sees
//! a location. Location servers hold encrypted positions under rotating
//! pseudo-identities. Proximity is decided with a Paillier-based blinded
//! comparison, so neither server learns both who and where.

pub mod arith;
pub mod asym;
pub mod distcmp;
pub mod geo;
pub mod ls;
pub mod paillier;
pub mod pid;
pub mod sns;
pub mod transport;
pub mod vehicle;
pub mod wire;
