//! Deterministic simulator and controller for a desk-scale computational
//! RFID testbed: a host drives a reader over a framed control protocol, the
//! reader inventories and reprograms battery-free tags over a simulated
//! backscatter channel.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clock;
pub mod config;
pub mod controller;
pub mod ensemble;
pub mod gen2;
pub mod llrp;
pub mod port;
pub mod reader;
pub mod rf;
pub mod service;
pub mod tag;
pub mod wisent;
pub mod world;
