//! Evaluation: corpus BLEU, latency metrics, the wait-k grid harness and
//! report emission.

pub mod bleu;
pub mod grid;
pub mod lagging;
pub mod report;

pub use bleu::{bleu, BleuReport};
pub use grid::{run_grid, GridData, GridModels, GridResult, PivotConfig};
pub use lagging::average_lagging;
