//! Batch processing, session storage, and the read-only HTTP API.

pub mod api;
pub mod evaluate;
pub mod pipeline;
pub mod store;
