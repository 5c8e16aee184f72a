//! Scenario runner for the laboratory: a JSON config, a small expression
//! language for Hamiltonians, and JSON/CSV reports.

pub mod config;
pub mod expr;
pub mod model;
pub mod ops;
pub mod report;
