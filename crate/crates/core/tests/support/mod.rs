#![allow(dead_code)]

pub mod ap_oracle;
pub mod dcc_oracle;
pub mod gradcheck;
