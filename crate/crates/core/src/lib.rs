//! Reasoning-path generation over local entity-passage graphs for multi-hop
//! question answering, at desk scale.

pub mod corpus;
pub mod eval;
pub mod fusion;
pub mod graphbuild;
pub mod net;
pub mod pipeline;
pub mod seqcodec;
pub mod tensor;
pub mod train;
