//! Language-driven driving scene editing.
//!
//! Commands are decomposed into per-agent instructions ([`orchestrator`]),
//! which edit a [`scene::SceneGraph`]: vehicles are placed and given
//! trajectories on a lane map ([`motion`]), the background is an
//! exposure-aware HDR voxel radiance field ([`field`]), inserted vehicles are
//! lit by a skydome blended with field queries ([`lighting`]) and merged by
//! depth ([`compositor`]).

// NaN-rejecting comparisons are written as negated `<` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod align;
pub mod bundle;
pub mod compositor;
pub mod demo;
pub mod field;
pub mod io;
pub mod lighting;
pub mod maps;
pub mod motion;
pub mod orchestrator;
pub mod par;
pub mod raster;
pub mod scene;

pub use par::Exec;
