// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod dynamics;
pub(crate) mod serde_mat;
pub mod spatial;
pub mod vision;
pub mod estimation;
pub mod nmpc;
pub mod solver;
pub mod harness;
pub mod verify;
pub mod cli;
