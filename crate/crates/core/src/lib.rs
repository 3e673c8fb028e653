//! Core analytics for turning per-frame vision outputs and simulation logs
//! into per-student multimodal timelines.

pub mod affect;
pub mod canonical;
pub mod config;
pub mod gaze3d;
pub mod ingest;
pub mod reid;
pub mod simlog;
pub mod timeline;
pub mod window;
