#![allow(dead_code)]

pub mod grads;
