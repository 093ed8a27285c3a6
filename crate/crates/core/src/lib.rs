pub mod aggregate;
pub mod cli;
pub mod corpus;
pub mod gateway;
pub mod parser;
pub mod report;
pub mod sentiment;
pub mod stats;
pub mod taxonomy;
