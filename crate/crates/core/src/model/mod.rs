//! Problem data and smooth program evaluators.

pub mod normal;
mod portfolio;
mod program;

pub use portfolio::{
    cardinality, portfolio_program, risk_coefficient, risk_gradient, risk_value, PortfolioInstance,
    PortfolioProgram, RiskKind, RiskSpec, GRADIENT_NORM_FLOOR,
};
pub use program::{
    max_violation, Bounds, FnProgram, Matrix, ProgramRef, Rebounded, SmoothProgram, Vector,
};
