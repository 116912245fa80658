//! Procedural scenes, SDF baking, trilinear lookup and iso-surface meshes.

pub mod grid;
mod mc_tables;
pub mod mesh;
pub mod scene;

pub use grid::{bake_colors, bake_grid, ColorGrid, SdfGrid, MIN_RESOLUTION};
pub use mesh::{extract_mesh, TriMesh};
pub use scene::{AnalyticShape, Csg, SceneSpec, ShapeKind};
