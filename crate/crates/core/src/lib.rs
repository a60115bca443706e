pub mod bench;
pub mod crypto;
pub mod error;
pub mod hash_tree;
pub mod message;
pub mod protocols;
pub mod sim;
pub mod tesla;

pub use error::{Error, Result};
