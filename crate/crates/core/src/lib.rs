//! Causal sequential recommendation laboratory.
//!
//! * [`scm`]: exact discrete SCM engine, d-separation, do-calculus checks and
//!   the recommendation causal graph;
//! * [`sim`]: parametric user simulator with a known decision mechanism;
//! * [`seqrec`]: recurrent acceptance model, analytic gradients and Adam;
//! * [`csrec`]: the interventional model trained under the recursion
//!   constraint;
//! * [`metrics`]: ranking and decision metrics, treatment effects;
//! * [`harness`]: configuration, file formats, pipeline commands and
//!   verification suites.

pub mod csrec;
pub mod harness;
pub mod metrics;
pub mod num;
pub mod rng;
pub mod scm;
pub mod seqrec;
pub mod sim;
