#![allow(dead_code)]

pub mod vectors;
pub mod control;
pub mod props;
pub mod sim;
