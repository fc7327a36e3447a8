//! Main-memory record retrieval, sorting, joins and batch index lookup built
//! around distribute-probe-gather, plus a trace-driven cache model that makes
//! the access-pattern claims checkable.

pub mod cachemodel;
pub mod datagen;
pub mod dpg;
pub mod error;
pub mod harness;
pub mod index;
pub mod join;
pub mod records;
pub mod sort;

pub use error::{Error, Result};
pub use records::{RecordFile, Rid, RidSequence, RunLayout};
