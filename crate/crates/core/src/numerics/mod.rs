//! Scalar numerical building blocks.

pub mod interp;
pub mod quadrature;
pub mod roots;

pub use interp::Pchip;
pub use quadrature::{adaptive_gauss, adaptive_simpson, GaussLegendre};
pub use roots::{brent, geometric_bracket};
