//! Tweet ingestion, filtering, classification and report aggregation.

mod bots;
mod domains;
mod records;
mod report;
mod states;

pub use bots::*;
pub use domains::*;
pub use records::*;
pub use report::*;
pub use states::*;
