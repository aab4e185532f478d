pub mod batch;
pub mod bench;
pub mod cli;
pub mod config;
pub mod kernel;
pub mod plugins;
pub mod rollout;
pub mod server;
pub mod text;
pub mod trajectory;
