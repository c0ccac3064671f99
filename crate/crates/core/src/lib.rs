pub mod attribution;
pub mod autodiff;
pub mod datagen;
pub mod encoding;
pub mod fidelity;
pub mod models;
pub mod params;
