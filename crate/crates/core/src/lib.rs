pub mod codec;
pub mod cit;
pub mod retrieval;
pub mod wire;
pub mod dispersal;
pub mod seed;
pub mod metrics;
pub mod incentives;
pub mod oracle;
pub mod simnet;
