//! Open-vocabulary 3D scene graphs built from posed RGB-D frames, indexed as
//! label-centered text chunks for retrieval-augmented question answering,
//! grounding, instance retrieval, and task planning.

// `!(x > 0.0)` guards are written that way so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod best_view;
pub mod canonical;
pub mod cli;
pub mod evaluation;
pub mod frames;
pub mod fusion;
pub mod geometry;
pub mod model_clients;
pub mod pipeline;
pub mod rag_tasks;
pub mod relations;
pub mod scene_model;
pub mod synthetic;
pub mod text;
pub mod vector_store;
