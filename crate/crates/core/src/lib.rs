//! Skeleton-guided neural avatar fields: body model, conditioning rasterizer,
//! differentiable volume renderer, deformation, score-distillation training and
//! animation.

pub mod animation;
pub mod articulation;
pub mod body;
pub mod camera;
pub mod field;
pub mod geometry;
pub mod guidance;
pub mod image;
pub mod nn;
pub mod rng;
pub mod selfcheck;
pub mod skeleton;
pub mod trainer;
