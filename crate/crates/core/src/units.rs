//! Byte and time unit helpers shared across the crate.

pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

/// Bytes·seconds to GB×min (GiB, minutes).
pub fn gb_min(byte_seconds: f64) -> f64 {
    byte_seconds / GIB as f64 / 60.0
}

pub fn bytes_to_mb(bytes: u64) -> f64 {
    bytes as f64 / MIB as f64
}

pub fn gib(bytes: u64) -> f64 {
    bytes as f64 / GIB as f64
}

/// Smallest multiple of `granule` that is at least `bytes`.
pub fn round_up(bytes: u64, granule: u64) -> u64 {
    bytes.div_ceil(granule) * granule
}

/// Smallest multiple of `granule` strictly above `bytes`.
pub fn round_above(bytes: u64, granule: u64) -> u64 {
    (bytes / granule + 1) * granule
}
