pub use bast_audio::config_hash;
