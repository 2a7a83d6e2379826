//! Trial protocol and analytics for the vest: randomized stimulus
//! schedules, session-log parsing, identification accuracy, selection
//! delay and confusion matrices, simulated responders, and drawn-path
//! scoring against odometry.

pub mod log;
pub mod metrics;
pub mod path;
pub mod schedule;
pub mod sim;

pub use log::{LogRecord, MentalLoad, ResponseEvent, TrialSession};
pub use metrics::{confusion, identification_accuracy, match_responses, selection_delay, ConfusionMatrix, MetricsReport};
pub use schedule::{make_schedule, JobDurations, Stimulus, TrialSchedule};
