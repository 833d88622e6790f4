//! Attribute-conditioned material appearance editing.

pub mod cli;
pub mod config;
pub mod data;
pub mod edit;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod probe;
pub mod service;
pub mod stu;
pub mod trainer;

pub use attriforge_tensor as tensor;
pub use error::{Error, Result};
pub use networks::{ArchConfig, Discriminator, Generator, SkipMode};
pub use stu::{AttributeValue, FeatureMap, HiddenState, StuCellParams};
