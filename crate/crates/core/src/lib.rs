pub mod analysis;
pub mod backend;
pub mod cipher;
pub mod config;
pub mod data;
pub mod dataset;
pub mod http;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod sim;
pub mod statfit;
