//! Exploration simulator: world generation, sensing, frontiers, planning,
//! and the exploration loop that records snapshot time series.

mod explore;
mod frontier;
mod path;
mod sensor;
mod worldgen;

pub use explore::{ExplorationRun, ExploreError, RobotConfig, Snapshot, explore};
pub use frontier::{
    DEFAULT_MIN_FRONTIER_CELLS, FrontierCluster, detect_frontiers, detect_frontiers_with,
};
pub use path::{FloodField, Path, PathError, flood_field, plan_path};
pub use sensor::{Beam, Pose, Scan, SensorConfig, SensorError, integrate_scan, raycast};
pub use worldgen::{EnvMeta, Environment, GenError, GenParams, generate_environment};
