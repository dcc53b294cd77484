//! Deterministic numerical core: dense linear algebra, GLM fitters, random
//! streams and finite differences.

pub mod diff;
pub mod glm;
pub mod linalg;
pub mod root;
pub mod sampling;

pub use diff::{finite_diff_grad, finite_diff_jacobian};
pub use glm::{expit, logistic_fit, loglink_fit, loglink_fit_offset, multinomial_fit, ols_fit, softmax_probs, FitResult, LogLinkFamily};
pub use linalg::{dot, inverse_general, solve_general, solve_spd, Cholesky, Matrix};
pub use root::{newton_root, RootResult};
pub use sampling::{Dist, Draws, RngStream};
