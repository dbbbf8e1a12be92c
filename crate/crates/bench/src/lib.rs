//! Fixtures shared by the criterion benchmarks.

use dyndp::{build_plan, DpPlan, PrivacyBudget, ScheduleHyperparams};

/// A dynamic plan at the default benchmark scale.
pub fn reference_plan(steps: usize) -> DpPlan {
    build_plan(
        PrivacyBudget::new(1.2, 1e-5).expect("valid budget"),
        ScheduleHyperparams {
            steps,
            sampling_rate: 250.0 / 60_000.0,
            rho_mu: 2.0,
            rho_c: 2.0,
            c0: 1.5,
        },
    )
    .expect("valid plan")
}
