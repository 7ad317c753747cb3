//! Relationship proposal ranking with relevance estimation and
//! knowledge-distilled predicate heads.

pub mod cli;
pub mod distill;
pub mod error;
pub mod eval;
pub mod io;
pub mod knowledge;
pub mod model;
pub mod rank;
pub mod stats;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{BBox, Dataset, Distribution, ImageRecord, Region, RelAnnotation, Vocabulary};
