pub mod discriminator;
pub mod fingerprint;
pub mod metrics;
pub mod transcript;
pub mod llm;
pub mod genome;
pub mod rollout;
pub mod evolve;
pub mod mock;
