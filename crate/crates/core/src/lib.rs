//! Divergence-kernel Monte-Carlo estimators for SDEs with multiplicative
//! noise: scores `∇ log h_t` and linear responses `δ log h_t` along forward
//! paths, their ergodic versions on long orbits, independent oracles to
//! check them against, and a forward-only diffusion-model fitter.
//!
//! ```
//! use divkernel::{get_model, ModelParams, PathConfig, simulate_ensemble, DivergenceKernel, AlphaSchedule};
//!
//! let ou = get_model("ou", ModelParams::new(vec![0.0, 0.0], 1)).unwrap();
//! let cfg = PathConfig::new(&ou, 0.01, 100, 1000, 7).with_directions(vec![vec![1.0, 0.0]]);
//! let hook = DivergenceKernel::continuous(AlphaSchedule::constant(10.0).unwrap());
//! let ens = simulate_ensemble(&cfg, &hook).unwrap();
//! assert_eq!(ens.len(), 1000);
//! ```

pub mod conditioning;
pub mod discrete;
pub mod error;
pub mod fit;
pub mod linresp;
pub mod model;
pub mod oracle;
pub mod par;
pub mod score;
pub mod simulate;

pub use conditioning::{bin_1d, knn, BinSpec, ConditionalTable};
pub use error::{Error, Result};
pub use fit::{fit, generate_dataset, kl_gradient, Dataset, FitConfig, FitHistory};
pub use linresp::{ergodic_linear_response, estimate_linear_response, DivergenceKernel, ErgodicConfig, ErgodicResult, Observable, StepMode};
pub use model::{get_model, ModelInstance, ModelParams};
pub use par::Execution;
pub use score::{estimate_score, AlphaSchedule};
pub use simulate::{simulate_ensemble, NoHook, PathConfig, PathEnsemble};
