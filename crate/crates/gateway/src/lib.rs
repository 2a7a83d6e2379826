//! Real-time frame service, session store, deterministic replay and the
//! `tactvest` command line.

pub mod engine;
pub mod export;
pub mod headless;
pub mod ingest;
pub mod live;
pub mod replay;
pub mod server;
pub mod store;
