pub mod fd_suite;
pub mod fixtures;
pub mod oracles;
