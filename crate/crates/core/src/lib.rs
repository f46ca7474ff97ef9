pub mod analysis;
pub mod codec;
pub mod dos;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod quantizer;
pub mod scenario;
pub mod sim;
pub mod topology;
