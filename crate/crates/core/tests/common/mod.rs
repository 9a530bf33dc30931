//! Independent reference implementations shared by the integration tests
//! and the acceptance suite.
#![allow(dead_code)]

pub mod arch;
pub mod conv;
pub mod grad;
pub mod morph;
pub mod noise;
