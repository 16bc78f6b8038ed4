//! Semantic-segmentation evaluation with standard mIoU and the
//! hierarchy-penalized safe mIoU (SmIoU), plus competition-style reports.
//!
//! The usual flow: load a [`LabelHierarchy`], pair ground-truth and
//! prediction label maps with [`dataset::pair_datasets`], accumulate a
//! [`ConfusionMatrix`] per image, merge, and [`metrics::summarize`].

pub mod cli;
pub mod confusion;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod hierarchy;
pub mod labelmap;
pub mod metrics;
pub mod oracle;
pub mod report;

pub use confusion::{ConfusionMatrix, IgnorePolicy, SetSizes};
pub use error::{Error, Result};
pub use hierarchy::{ClassId, ImportantSet, ImportantSpec, LabelHierarchy, TreeDistance};
pub use labelmap::{LabelMap, IGNORE};
pub use metrics::{ClassMetrics, MetricSummary, SubsetPenalty};
