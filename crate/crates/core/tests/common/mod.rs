#![allow(dead_code)]

pub mod gauss_seidel;
pub mod oracles;
