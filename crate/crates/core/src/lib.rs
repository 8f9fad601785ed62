//! Granular-ball twin support vector machines with Universum data.
//!
//! Modules, bottom up:
//!
//! - [`data`]: CSV loading, scaling, splits and folds.
//! - [`granular`]: granular-ball generation and Universum balls.
//! - [`qp`]: box-constrained QP solver and regularized Gram factors.
//! - [`models`]: TSVM, U-TSVM and GBU-TSVM training and prediction.
//! - [`stats`]: Friedman, Wilcoxon, Kruskal-Wallis and win-tie-loss.
//! - [`bench`]: grid-searched cross-validation experiments and reports.

pub mod bench;
pub mod data;
pub mod granular;
pub mod io;
pub mod models;
pub mod qp;
pub mod stats;

pub use data::{Dataset, Label};
pub use granular::{BallGenConfig, BallSet, GranularBall};
pub use models::{Hyperparams, Kernel, ModelKind, TrainInputs, TrainOptions, TrainedModel};
pub use qp::{solve_box_qp, BoxQp, SolverOptions};
