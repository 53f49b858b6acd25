//! Art arena: fitness trials, round-robin motif duels and influence-ledger
//! ranking for auditing stylistic influence in text-to-image models.

pub mod analysis;
pub mod arena;
pub mod backend;
pub mod catalog;
pub mod config;
pub mod metric;
pub mod mock;
pub mod prompting;
pub mod protocol;
pub mod report;
pub mod runner;
pub mod seed;
pub mod store;
pub mod text;
