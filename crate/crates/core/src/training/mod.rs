//! Joint optimization of the bag loss and the attention supervision loss.

pub mod adam;
pub mod loss;
pub mod trainer;

pub use adam::AdamState;
pub use loss::{attention_terms, bag_objective, check_labels, loss_att, loss_re, BagObjective};
pub use trainer::{joint_step, EpochSummary, StepMetrics, Trainer};
