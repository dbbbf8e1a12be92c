//! Dynamic differentially private SGD under Gaussian differential privacy.
//!
//! The crate plans per-step privacy schedules (noise multiplier and clipping
//! threshold that both evolve over training) so that the composed guarantee
//! meets a target (ε, δ), audits those schedules with an independent Rényi DP
//! bound, and runs centralised and federated training with the planned
//! mechanism.
//!
//! ```
//! use dyndp::{build_plan, PrivacyBudget, ScheduleHyperparams};
//!
//! let plan = build_plan(
//!     PrivacyBudget::new(1.2, 1e-5).unwrap(),
//!     ScheduleHyperparams { steps: 1000, sampling_rate: 0.01, rho_mu: 2.0, rho_c: 2.0, c0: 1.0 },
//! )
//! .unwrap();
//! let curve = plan.consumption_curve().unwrap();
//! assert!((curve[999] - 1.2).abs() < 1e-6);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod accountant;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fedsim;
pub mod mech;
pub mod model;
pub mod optim;
pub mod planner;
pub mod rdp;
pub mod report;
pub mod rng;
pub mod special;
pub mod train;

pub use accountant::{compose_clt, delta_of, eps_consumption_curve, eps_of, mu_of, GdpLevel, PrivacyBudget};
pub use data::{gen_synthetic, load_idx, Dataset, Split};
pub use diagnostics::{theory_report, TheoryReport};
pub use error::{Error, Result};
pub use fedsim::{even_partition, fed_train, FedConfig};
pub use mech::{noisy_aggregate, DenomMode, GradientBatch, MechParams, NoisyUpdate, StepOutcome};
pub use model::{Model, ModelKind};
pub use optim::{AdamConfig, ModelParams, OptimizerKind};
pub use planner::{build_plan, DpPlan, GeneralPlan, Method, ScheduleHyperparams};
pub use rdp::{audit_plan, sandwich, SandwichRow};
pub use train::{train, train_non_private, StepRecord, StepSchedule, TrainConfig, TrainHistory};
