use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group / bank / mat organization of the memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryHierarchy {
    pub rows_per_mat: usize,
    pub cols_per_mat: usize,
    /// Mats per bank as a `[x, y]` grid.
    pub mats_per_bank: [usize; 2],
    /// Banks per group as a `[x, y]` grid.
    pub banks_per_group: [usize; 2],
    pub groups: usize,
}

impl Default for MemoryHierarchy {
    fn default() -> Self {
        Self {
            rows_per_mat: 256,
            cols_per_mat: 512,
            mats_per_bank: [2, 2],
            banks_per_group: [8, 8],
            groups: 16,
        }
    }
}

/// Location of one mat.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatCoord {
    pub group: usize,
    pub bank: usize,
    pub mat: usize,
}

impl fmt::Display for MatCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}/b{}/m{}", self.group, self.bank, self.mat)
    }
}

impl MemoryHierarchy {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("rows_per_mat", self.rows_per_mat),
            ("cols_per_mat", self.cols_per_mat),
            ("mats_per_bank", self.mats_per_bank[0]),
            ("mats_per_bank", self.mats_per_bank[1]),
            ("banks_per_group", self.banks_per_group[0]),
            ("banks_per_group", self.banks_per_group[1]),
            ("groups", self.groups),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("hierarchy.{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn mats_in_bank(&self) -> usize {
        self.mats_per_bank[0] * self.mats_per_bank[1]
    }

    pub fn banks_in_group(&self) -> usize {
        self.banks_per_group[0] * self.banks_per_group[1]
    }

    pub fn total_banks(&self) -> usize {
        self.banks_in_group() * self.groups
    }

    pub fn total_mats(&self) -> usize {
        self.mats_in_bank() * self.total_banks()
    }

    pub fn bits_per_mat(&self) -> u64 {
        (self.rows_per_mat * self.cols_per_mat) as u64
    }

    pub fn capacity_bits(&self) -> u64 {
        self.bits_per_mat() * self.total_mats() as u64
    }

    /// Flat mat index to coordinates, mats varying fastest.
    pub fn coord(&self, index: usize) -> Result<MatCoord> {
        if index >= self.total_mats() {
            return Err(Error::Bounds {
                what: "mat",
                index,
                limit: self.total_mats(),
            });
        }
        let mat = index % self.mats_in_bank();
        let bank_flat = index / self.mats_in_bank();
        Ok(MatCoord {
            group: bank_flat / self.banks_in_group(),
            bank: bank_flat % self.banks_in_group(),
            mat,
        })
    }
}
