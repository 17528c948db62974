#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cg;
pub mod error;
pub mod model;
pub mod oracle;
pub mod reduction;
pub mod sim;
pub mod solver;
pub mod verify;

#[cfg(test)]
mod testutil;
