//! Blow-up constructions for singular foliations: Grassmannian isotropy
//! limits, the blow-up groupoid of a matrix Lie group action, and
//! path-holonomy leaf distributions.

pub mod action;
pub mod blowup;
pub mod error;
pub mod fixtures;
pub mod foliation;
pub mod grassmann;
pub mod holonomy;
pub mod linalg;
pub mod poly;

pub use error::{Error, Result};
pub use grassmann::Subspace;
pub use action::{GroupoidElement, LieAlgebraAction, Verdict};
pub use blowup::{BlowupConfig, BlowupFiberReport};
pub use foliation::{BlowupPoint, FoliationModule};
