//! Vibrotactile coding engine for a 40-motor vest: motor topology,
//! pattern compilation, the event pattern library, the odometry-driven
//! direction channel and the real-time frame mixer.

pub mod direction;
pub mod frame;
pub mod library;
pub mod mixer;
pub mod pattern;
pub mod vest;

pub use frame::{FrameSequence, MotorFrame};
pub use library::{CodingStrategy, EventKind, PatternLibrary};
pub use pattern::{compile, validate, PatternSpec, Primitive, PrimitiveKind, Target};
pub use vest::{band_ring, region, BandRing, MotorId, Panel, Region};
