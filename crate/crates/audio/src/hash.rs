use serde::Serialize;
use sha2::{Digest, Sha256};

/// Short stable fingerprint of a serializable configuration: the first
/// 16 hex digits of the SHA-256 of its JSON encoding.
pub fn config_hash<C: Serialize + ?Sized>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("configuration serializes to JSON");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}
