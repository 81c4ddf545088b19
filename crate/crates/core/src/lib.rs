//! LUKE: contextualized word and entity representations from an
//! entity-aware transformer.

pub mod corpus;
pub mod fsio;
pub mod model;
pub mod numerics;
pub mod pretrain;
pub mod seeds;
pub mod synth;
pub mod tasks;
