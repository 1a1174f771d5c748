use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration types serialize infallibly");
    hex::encode(Sha256::digest(&bytes))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
