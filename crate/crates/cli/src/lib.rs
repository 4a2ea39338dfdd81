//! `sellkit` command-line driver and HTTP service.

pub mod app;
pub mod cli;
pub mod error;
pub mod service;
