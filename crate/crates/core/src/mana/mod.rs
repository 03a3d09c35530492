//! Region-partitioned asynchronous training: one agent per touched cell of
//! a grid over the scene's bounding box, a distribution context that routes
//! frames and hands out iteration budgets, and routed prediction.

mod budget;
mod checkpoint;
mod distribute;
mod region;
mod runtime;
mod snapshot;

pub use budget::{assign_budgets, BudgetCandidate, BudgetPolicy, RankBy, DEFAULT_QUOTA};
pub use checkpoint::{
    read_checkpoint, read_manifest, write_checkpoint, AgentEntry, Manifest, CHECKPOINT_VERSION,
    MANIFEST_FILE,
};
pub use distribute::{distribute, Distribution};
pub use region::{RegionGridConfig, RegionIndex};
pub use runtime::{
    default_executors, initial_learner, AgentStats, BudgetAccounting, DrainPolicy, FeedAck,
    ManaRuntime, Mode, RuntimeConfig, Scheduler, DEFAULT_BATCH_SIZE,
};
pub use snapshot::{BatchPredictor, Prediction, Snapshot, UNCOVERED_COLOR};
