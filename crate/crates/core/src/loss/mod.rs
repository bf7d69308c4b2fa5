//! Forward-backward over unrolled graphs and the training criteria.

mod criteria;
mod forward_backward;

pub use criteria::{ce_loss, joint_loss, l2_penalty, lfmmi_loss, JointReport, LossReport};
pub(crate) use forward_backward::check_loglik;
pub use forward_backward::{forward_backward, forward_total, ForwardBackward, Occupancy};
