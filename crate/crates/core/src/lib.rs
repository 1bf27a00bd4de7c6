pub mod data;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod pseudo;
pub mod raster;
pub mod training;
