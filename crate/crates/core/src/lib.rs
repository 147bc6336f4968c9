pub mod dsp;
pub mod harness;
pub mod micronet;
pub mod seed;
pub mod synth;
pub mod telemetry;
