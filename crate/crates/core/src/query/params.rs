use serde::Serialize;

use crate::error::{Error, Result};
use crate::signatures::{CN_SIG_BITS, SIFT_SIG_BITS};

/// Online query settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryParams {
    /// Nearest SIFT words visited per query feature.
    pub ma_sift: usize,
    /// Nearest color words visited per query feature.
    pub ma_color: usize,
    /// Color Hamming threshold; a match needs `d < kappa_color`.
    pub kappa_color: u32,
    pub sigma_color: f64,
    /// SIFT Hamming threshold; a match needs `d < tau_sift`.
    pub tau_sift: u32,
    pub sigma_sift: f64,
    pub enable_sift_he: bool,
    pub enable_color_he: bool,
    pub enable_burst: bool,
    /// Use `ln(N / n_ij)` instead of `N / n_ij`.
    pub log_idf: bool,
}

impl Default for QueryParams {
    /// Defaults for a 200-word color codebook.
    fn default() -> Self {
        QueryParams::for_color_codebook(200)
    }
}

impl QueryParams {
    /// Defaults with `ma_color = ceil(k_c / 2)`.
    pub fn for_color_codebook(k_c: u32) -> Self {
        QueryParams {
            ma_sift: 3,
            ma_color: (k_c as usize).div_ceil(2).max(1),
            kappa_color: 7,
            sigma_color: 4.0,
            tau_sift: 30,
            sigma_sift: 16.0,
            enable_sift_he: true,
            enable_color_he: true,
            enable_burst: true,
            log_idf: false,
        }
    }

    /// Single assignment on both axes, everything else unchanged.
    pub fn single_assignment(mut self) -> Self {
        self.ma_sift = 1;
        self.ma_color = 1;
        self
    }

    /// Checks ranges against the codebook sizes. `k_c` is `None` for a
    /// SIFT-only index, in which case the color settings are ignored.
    pub fn validate(&self, k_s: u32, k_c: Option<u32>) -> Result<()> {
        if self.ma_sift == 0 || self.ma_sift > k_s as usize {
            return Err(Error::AssignmentRange {
                m: self.ma_sift,
                k: k_s as usize,
            });
        }
        if let Some(k_c) = k_c {
            if self.ma_color == 0 || self.ma_color > k_c as usize {
                return Err(Error::AssignmentRange {
                    m: self.ma_color,
                    k: k_c as usize,
                });
            }
            // kappa = CN_SIG_BITS + 1 accepts every pair.
            if self.kappa_color > CN_SIG_BITS + 1 {
                return Err(Error::Config(format!(
                    "kappa_color {} exceeds {}",
                    self.kappa_color,
                    CN_SIG_BITS + 1
                )));
            }
            if !(self.sigma_color.is_finite() && self.sigma_color > 0.0) {
                return Err(Error::Config(format!(
                    "sigma_color must be positive, got {}",
                    self.sigma_color
                )));
            }
        }
        if self.tau_sift > SIFT_SIG_BITS + 1 {
            return Err(Error::Config(format!(
                "tau_sift {} exceeds {}",
                self.tau_sift,
                SIFT_SIG_BITS + 1
            )));
        }
        if !(self.sigma_sift.is_finite() && self.sigma_sift > 0.0) {
            return Err(Error::Config(format!(
                "sigma_sift must be positive, got {}",
                self.sigma_sift
            )));
        }
        Ok(())
    }
}
