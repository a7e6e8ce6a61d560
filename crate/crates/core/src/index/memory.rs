//! Logical storage cost per indexed feature.

use serde::Serialize;

use super::InvertedIndex;
use crate::signatures::{CN_SIG_BITS, SIFT_SIG_BITS};

const IMAGE_ID_BITS: u64 = 32;

/// What each posting stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum MemoryProfile {
    /// Image id only.
    Baseline,
    /// Image id and color signature.
    Cmi,
    /// Image id and SIFT signature.
    He,
    /// Image id and both signatures.
    CmiHe,
}

impl MemoryProfile {
    pub const ALL: [MemoryProfile; 4] = [
        MemoryProfile::Baseline,
        MemoryProfile::Cmi,
        MemoryProfile::He,
        MemoryProfile::CmiHe,
    ];

    pub fn bits_per_feature(self) -> u64 {
        let sift = SIFT_SIG_BITS as u64;
        let cn = CN_SIG_BITS as u64;
        match self {
            MemoryProfile::Baseline => IMAGE_ID_BITS,
            MemoryProfile::Cmi => IMAGE_ID_BITS + cn,
            MemoryProfile::He => IMAGE_ID_BITS + sift,
            MemoryProfile::CmiHe => IMAGE_ID_BITS + sift + cn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MemoryProfile::Baseline => "baseline",
            MemoryProfile::Cmi => "cmi",
            MemoryProfile::He => "he",
            MemoryProfile::CmiHe => "cmi+he",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryFootprint {
    pub profile: MemoryProfile,
    pub bytes_per_feature: f64,
    pub features: u64,
    /// Posting payload, rounded up to whole bytes.
    pub total_bytes: u64,
    /// Entry directory, not included in `total_bytes`.
    pub directory_bytes: u64,
}

pub fn memory_footprint<I: InvertedIndex + ?Sized>(
    index: &I,
    profile: MemoryProfile,
) -> MemoryFootprint {
    footprint_for(
        index.num_postings(),
        index.num_entries() * index.directory_entry_bytes(),
        profile,
    )
}

pub(crate) fn footprint_for(
    features: u64,
    directory_bytes: u64,
    profile: MemoryProfile,
) -> MemoryFootprint {
    let bits = profile.bits_per_feature();
    MemoryFootprint {
        profile,
        bytes_per_feature: bits as f64 / 8.0,
        features,
        total_bytes: (features * bits).div_ceil(8),
        directory_bytes,
    }
}
