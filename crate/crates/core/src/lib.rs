// Negated comparisons below deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod comparator;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod physics;
pub mod scenario;
pub mod solver;
