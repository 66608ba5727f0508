//! Answering analytical questions over relational databases by combining
//! generated SQL (data fetching) with generated analysis code (computation),
//! plus the execution-accuracy evaluation used to compare methods.

pub mod answer;
pub mod dataset;
pub mod llm;
pub mod schema;
pub mod table;
pub mod prompting;
pub mod sql;
pub mod code;
pub mod pipelines;
pub mod eval;
pub mod bench;
