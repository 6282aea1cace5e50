pub mod demo;
pub mod evolve;
pub mod fingerprint;
pub mod pipeline;
pub mod plot;
pub mod score;
pub mod select;
pub mod train;
