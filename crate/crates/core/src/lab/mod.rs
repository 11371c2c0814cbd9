//! Error estimation, rate fitting and operator certifications.

pub mod certify;
pub mod experiment;
pub mod gaussian;
pub mod rate;
pub mod testfn;
