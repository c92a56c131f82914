#![allow(dead_code)]

pub mod cases;
pub mod desk;
pub mod fixtures;
pub mod oracles;
