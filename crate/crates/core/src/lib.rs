pub mod analysis;
pub mod att;
pub mod data;
pub mod error;
pub mod numeric;
pub mod oracle;
pub mod propensity;
pub mod quadrature;
pub mod sandwich;
pub mod scenario;
pub mod simulate;
