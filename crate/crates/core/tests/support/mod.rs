#![allow(dead_code)]

pub mod margin_oracle;
