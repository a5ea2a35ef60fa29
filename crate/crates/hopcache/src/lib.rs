//! An embeddable property-graph engine that caches one-hop sub-query results
//! inside the same transactional ordered key-value store that holds the graph,
//! keeping the cache transactionally consistent with the data it is derived
//! from.

pub mod cache;
pub mod coordinator;
pub mod error;
pub mod fixture;
pub mod graphstore;
pub mod harness;
pub mod kvstore;
pub mod maintenance;
pub mod queryengine;
pub mod templates;
