//! Distributed graph analytics on an asynchronous many-task runtime.
//!
//! - [`graph`]: edge lists, CSR graphs, the uniform random generator and
//!   on-disk formats.
//! - [`transport`]: in-process and TCP message delivery.
//! - [`runtime`]: localities, remote actions with completion tracking,
//!   partitioned vectors, barriers and reductions.
//! - [`bfs`] and [`pagerank`]: the distributed algorithms with their
//!   sequential references.

pub mod bfs;
pub mod graph;
pub mod pagerank;
pub mod runtime;
pub mod transport;
