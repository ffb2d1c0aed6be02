//! Entropic optimal transport: Sinkhorn, Gromov–Wasserstein and fused GW.

mod gromov;
mod sinkhorn;

pub use gromov::{
    fgw_gradient_wrt_latent, fgw_loss, fgw_loss_trace, fgw_loss_with_marginals, gw_loss, gw_loss_trace, gw_loss_with_marginals,
    relational_objective, FgwConfig, PlanInit,
};
pub use sinkhorn::{sinkhorn, uniform, SinkhornConfig, TransportPlan};
