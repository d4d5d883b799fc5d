//! Linear A and Linear B: a small first-order language with a linear type
//! system, a cost-metered interpreter, and the three program transformations
//! that together implement reverse-mode differentiation: forward
//! differentiation, unzipping, and transposition.

pub mod cli;
pub mod interp;
pub mod ir;
pub mod jvp;
pub mod oracle;
pub mod parser;
pub mod pipeline;
pub mod structured;
pub mod transpose;
pub mod typecheck;
pub mod unzip;
