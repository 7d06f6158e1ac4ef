//! Core library for assertion generation, data synthesis and bounded
//! equivalence checking.

pub mod agent;
pub mod bridge;
pub mod equiv;
pub mod ir;
pub mod metrics;
pub mod pipeline;
pub mod review;
pub mod store;
pub mod sva;
pub mod util;
