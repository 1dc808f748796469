//! Forward performance processes on finite event trees and in a
//! diffusion market.
//!
//! The crate is organised bottom-up: [`fields`] holds utility slices and
//! their convex conjugates, [`tree_market`] describes finite trees and their
//! martingale measures, [`tree_verifier`] runs the dynamic-programming and
//! duality checks on a tree, [`ito_engine`] simulates the diffusion model
//! and [`mc_verifier`] turns simulated paths into statistical verdicts.

pub mod fields;
pub mod fixtures;
pub mod ito_engine;
pub mod mc_verifier;
pub mod numeric;
pub mod report;
pub mod tree_market;
pub mod tree_verifier;
