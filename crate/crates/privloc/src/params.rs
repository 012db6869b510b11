use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-tile order-preserving encryption flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpeMode {
    /// Keyed positive scale + offset per axis. Preserves straight segments
    /// exactly, so crossing detection is exact.
    Affine,
    /// Recursive keyed binary range splitting. Hides within-tile distances
    /// better but bends segments; detection error is measured, not zero.
    Piecewise,
}

/// Which stages of the encryption pipeline are active. All stages are on in
/// production; the analysis harness disables individual stages to measure
/// their effect, and the bench uses the all-off configuration as a
/// pass-through baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherOptions {
    pub prp: bool,
    pub isometry: bool,
    pub ope: bool,
}

impl Default for CipherOptions {
    fn default() -> Self {
        CipherOptions { prp: true, isometry: true, ope: true }
    }
}

impl CipherOptions {
    pub const IDENTITY: CipherOptions = CipherOptions { prp: false, isometry: false, ope: false };
}

/// Global system parameters shared by the gateway, the simulator and the
/// analysis harness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Security level in bits; master keys are lambda-bit strings.
    pub lambda: u32,
    /// Tile width/height in map units.
    pub tile_len: u64,
    /// Tiles per row (map width in tiles).
    pub n_x: u64,
    /// Tiles per column (map height in tiles).
    pub n_y: u64,
    /// The three tiling offsets in map units, applied to both axes.
    pub offsets: [u64; 3],
    pub ope_mode: OpeMode,
    /// Encrypted per-tile coordinate range; also the slot width backends see.
    pub ope_range: u64,
    /// Subscription batch threshold k̄.
    pub batch_k: usize,
    /// Maximum accepted movement magnitude in map units.
    pub max_move: u64,
}

impl SystemParams {
    /// Desk-scale defaults: 1000x1000-unit map, 100-unit tiles.
    pub fn new(tile_len: u64, n_x: u64, n_y: u64) -> Self {
        let third = tile_len / 3;
        SystemParams {
            lambda: 128,
            tile_len,
            n_x,
            n_y,
            offsets: [0, third, 2 * third],
            ope_mode: OpeMode::Affine,
            ope_range: 1 << 16,
            batch_k: 1,
            max_move: third,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_len == 0 || self.n_x == 0 || self.n_y == 0 {
            return Err(Error::Config("tile_len, n_x, n_y must be positive".into()));
        }
        if self.ope_range < self.tile_len {
            return Err(Error::Config(format!(
                "ope_range {} < tile_len {}",
                self.ope_range, self.tile_len
            )));
        }
        if self.batch_k < 1 {
            return Err(Error::Config("batch_k must be >= 1".into()));
        }
        if self.lambda == 0 || self.lambda % 8 != 0 {
            return Err(Error::Config("lambda must be a positive multiple of 8".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &z in &self.offsets {
            if z >= self.tile_len {
                return Err(Error::Config(format!("offset {} not in [0, tile_len)", z)));
            }
            if !seen.insert(z) {
                return Err(Error::Config("tiling offsets must be distinct".into()));
            }
        }
        if self.max_move > self.tile_len / 3 {
            return Err(Error::Config(format!(
                "max_move {} exceeds tile_len/3 = {}; the crossing-fit guarantee would break",
                self.max_move,
                self.tile_len / 3
            )));
        }
        Ok(())
    }

    /// Map width in map units.
    pub fn map_w(&self) -> u64 {
        self.n_x * self.tile_len
    }

    /// Map height in map units.
    pub fn map_h(&self) -> u64 {
        self.n_y * self.tile_len
    }

    /// Number of tiles, i.e. the PRP domain.
    pub fn tile_count(&self) -> u64 {
        self.n_x * self.n_y
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams::new(100, 10, 10)
    }
}
