//! Analysis parameters for one processing run, loadable from JSON.

use serde::{Deserialize, Serialize};

use crate::affect::AffectThresholds;
use crate::reid::TrackerParams;
use crate::simlog::InitialWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazeParams {
    /// Frames pooled into one gaze segment.
    pub window_frames: u64,
}

impl Default for GazeParams {
    fn default() -> Self {
        GazeParams { window_frames: 150 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub tracker: TrackerParams,
    pub affect: AffectThresholds,
    pub gaze: GazeParams,
    pub initial_window: InitialWindow,
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
