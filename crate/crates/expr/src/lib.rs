//! Scalar expressions over named real variables: parsing, printing,
//! evaluation, symbolic differentiation and truncated series in a small
//! parameter.

pub mod ast;
pub mod diff;
pub mod eval;
pub mod parser;
pub mod series;

pub use ast::{BinOp, Expr, UnaryOp};
pub use diff::{differentiate, simplify};
pub use eval::{CompiledExpr, EvalError, EvalErrorKind, SlotMap};
pub use parser::{parse_expression, parse_with, ParseError, RESERVED};
pub use series::{epsilon_series, SeriesError};
