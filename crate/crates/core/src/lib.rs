pub mod distributions;
pub mod gene_expression;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod simulator;
pub mod solver;
pub mod tolerances;
