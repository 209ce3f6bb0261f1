//! Raster drawing and procedural content: faces, masks, backgrounds.

pub mod draw;
pub mod face;
pub mod font;
