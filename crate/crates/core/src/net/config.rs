use alloc::vec;
use alloc::vec::Vec;

use crate::{contract, Result};

/// One reducer + cluster stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct StageConfig {
    pub k_neighbors: usize,
    pub reduce_ratio: usize,
    pub out_dim: usize,
    pub heads: usize,
    /// The cluster block uses `n / centers_ratio` centers.
    pub centers_ratio: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            k_neighbors: 16,
            reduce_ratio: 4,
            out_dim: 32,
            heads: 4,
            centers_ratio: 4,
        }
    }
}

impl StageConfig {
    pub fn with_dim(out_dim: usize) -> Self {
        StageConfig {
            out_dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 || self.reduce_ratio == 0 || self.heads == 0 || self.out_dim == 0 {
            return Err(contract!("stage sizes must be positive: {:?}", self));
        }
        if !self.out_dim.is_multiple_of(self.heads) {
            return Err(contract!(
                "stage out_dim {} is not divisible by {} heads",
                self.out_dim,
                self.heads
            ));
        }
        if self.centers_ratio < 2 {
            return Err(contract!(
                "centers_ratio must be at least 2, got {}",
                self.centers_ratio
            ));
        }
        Ok(())
    }

    /// Point count after this stage's reducer.
    pub fn reduced(&self, n: usize) -> usize {
        (n / self.reduce_ratio).max(1)
    }
}

/// What the reducer gate `f4` sees for a neighbor pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PairEncoding {
    /// The 8-component rigid-motion-invariant encoding.
    #[default]
    Geometric,
    /// Both raw positions concatenated, `[p_k, p]`.
    AbsolutePositions,
}

impl PairEncoding {
    pub fn dim(self) -> usize {
        match self {
            PairEncoding::Geometric => crate::geom::GEOM_DIM,
            PairEncoding::AbsolutePositions => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ModelConfig {
    pub stem_dim: usize,
    pub stages: Vec<StageConfig>,
    pub descriptor_dim: usize,
    pub encoder_heads: usize,
    pub pair_encoding: PairEncoding,
    /// When false the color channels of the stem input are zeroed.
    pub use_color: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stem_dim: 32,
            stages: vec![
                StageConfig::with_dim(32),
                StageConfig::with_dim(64),
                StageConfig::with_dim(128),
                StageConfig::with_dim(256),
            ],
            descriptor_dim: 256,
            encoder_heads: 4,
            pair_encoding: PairEncoding::Geometric,
            use_color: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_dim == 0 || self.descriptor_dim == 0 || self.encoder_heads == 0 {
            return Err(contract!("model sizes must be positive"));
        }
        if self.stages.is_empty() {
            return Err(contract!("model needs at least one stage"));
        }
        if !self.descriptor_dim.is_multiple_of(self.encoder_heads) {
            return Err(contract!(
                "descriptor_dim {} is not divisible by {} encoder heads",
                self.descriptor_dim,
                self.encoder_heads
            ));
        }
        self.stages.iter().try_for_each(StageConfig::validate)
    }

    /// Point counts of every level after the stem, e.g. 2000 ->
    /// `[500, 125, 31, 7]` for the default stages.
    pub fn level_sizes(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut cur = n;
        for s in &self.stages {
            cur = s.reduced(cur);
            out.push(cur);
        }
        out
    }

    /// Checks that an `n`-point frame can pass through every stage.
    pub fn check_point_count(&self, n: usize) -> Result<()> {
        let mut cur = n;
        for (i, s) in self.stages.iter().enumerate() {
            if cur < s.k_neighbors {
                return Err(contract!(
                    "stage {i} needs at least {} input points, has {cur}",
                    s.k_neighbors
                ));
            }
            cur = s.reduced(cur);
            if cur < s.centers_ratio {
                return Err(contract!(
                    "stage {i} cluster needs at least {} points, has {cur}",
                    s.centers_ratio
                ));
            }
        }
        Ok(())
    }
}
