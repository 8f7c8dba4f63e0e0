#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod buffer;
pub mod channel;
pub mod config;
pub mod filter;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod scenario;
pub mod tskf;
