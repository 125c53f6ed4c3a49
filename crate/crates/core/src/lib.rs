//! Dynamic character networks, sentiment and topical states from chaptered
//! narrative text.

pub mod corpus;
pub mod error;
pub mod export;
pub mod network;
pub mod pipeline;
pub mod sentiment;
pub mod sequence;
pub mod topics;

pub use error::{Error, Result};
