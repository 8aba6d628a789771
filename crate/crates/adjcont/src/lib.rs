//! Continuation of extended problems with adjoint sensitivities.

pub mod error;
pub mod flow;
pub mod invc;
pub mod linalg;
pub mod osc;
pub mod continuation;
pub mod problem;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/ch1_problems.md")]
pub mod chapter1 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/ch2_adjoints.md")]
pub mod chapter2 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/ch3_continuation.md")]
pub mod chapter3 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/ch4_flows.md")]
pub mod chapter4 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/ch5_curves.md")]
pub mod chapter5 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/ch6_cli.md")]
pub mod chapter6 {}
