//! Steering service and operator CLI over the debris-flow core.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod http;
pub mod hub;
pub mod layers;
pub mod protocol;
