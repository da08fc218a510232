pub mod analysis;
pub mod app;
pub mod campaign;
pub mod clocktree;
pub mod coupling;
pub mod fidelity;
pub mod rfchain;
pub mod schedule;
pub mod thermal;
