use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::DType;

/// Prediction block identifier: pyramid `k` (1-based) and level `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CutPoint {
    pub k: usize,
    pub l: usize,
}

impl CutPoint {
    pub fn new(k: usize, l: usize) -> Self {
        Self { k, l }
    }
}

impl fmt::Display for CutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.k, self.l)
    }
}

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Number of pyramids `K`.
    pub pyramids: usize,
    /// Halvings per pyramid `L`.
    pub levels: usize,
    /// Joint count `N`.
    pub joints: usize,
    /// Feature channels inside the pyramids `N_f`.
    pub features: usize,
    pub input_h: usize,
    pub input_w: usize,
    /// Entry flow widths: stem, then (1×1, 3×3) output widths of the three
    /// residual stages. The last entry must equal `features`.
    pub entry_channels: [usize; 7],
    pub precision: DType,
}

impl NetworkConfig {
    /// The full-size network: 8 pyramids over 4 scales on 256×256 input.
    pub fn paper() -> Self {
        Self {
            pyramids: 8,
            levels: 3,
            joints: 17,
            features: 384,
            input_h: 256,
            input_w: 256,
            entry_channels: [64, 64, 128, 128, 256, 192, 384],
            precision: DType::F32,
        }
    }

    /// Desk-scale network used by the tests and the toy training run.
    pub fn toy() -> Self {
        Self {
            pyramids: 4,
            levels: 2,
            joints: 17,
            features: 64,
            input_h: 128,
            input_w: 128,
            entry_channels: [8, 8, 16, 16, 32, 32, 64],
            precision: DType::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.pyramids == 0 || self.levels == 0 || self.joints == 0 || self.features == 0 {
            return bad(format!(
                "pyramids, levels, joints and features must be >= 1 (got K={}, L={}, N={}, N_f={})",
                self.pyramids, self.levels, self.joints, self.features
            ));
        }
        let div = 1usize << (3 + self.levels);
        if self.input_h == 0 || self.input_w == 0 || self.input_h % div != 0 || self.input_w % div != 0 {
            return bad(format!(
                "input {}×{} must be divisible by {div} for L={}",
                self.input_h, self.input_w, self.levels
            ));
        }
        if self.entry_channels.contains(&0) {
            return bad("entry channel widths must be >= 1".into());
        }
        if self.entry_channels[6] != self.features {
            return bad(format!(
                "last entry width {} must equal features {}",
                self.entry_channels[6], self.features
            ));
        }
        Ok(())
    }

    /// Spatial extent `(H, W)` of features at level `l`.
    pub fn level_extent(&self, l: usize) -> (usize, usize) {
        (self.input_h >> (3 + l), self.input_w >> (3 + l))
    }

    /// Levels owned by pyramid `k`, in execution order.
    pub fn pyramid_levels(&self, k: usize) -> Vec<usize> {
        if k % 2 == 1 {
            (1..=self.levels).collect()
        } else {
            (0..self.levels).rev().collect()
        }
    }

    /// Every prediction block in execution order.
    pub fn cut_points(&self) -> Vec<CutPoint> {
        (1..=self.pyramids)
            .flat_map(|k| self.pyramid_levels(k).into_iter().map(move |l| CutPoint { k, l }))
            .collect()
    }

    /// Position of `cut` in execution order, or an error listing valid cuts.
    pub fn cut_position(&self, cut: CutPoint) -> Result<usize> {
        let cuts = self.cut_points();
        cuts.iter().position(|&c| c == cut).ok_or_else(|| Error::InvalidCut {
            k: cut.k,
            l: cut.l,
            valid: cuts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
        })
    }

    pub fn last_cut(&self) -> CutPoint {
        *self.cut_points().last().expect("at least one block")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        NetworkConfig::paper().validate().unwrap();
        NetworkConfig::toy().validate().unwrap();
    }

    #[test]
    fn toy_two_pyramids_pattern() {
        let cfg = NetworkConfig { pyramids: 2, ..NetworkConfig::toy() };
        let cuts: Vec<(usize, usize)> = cfg.cut_points().iter().map(|c| (c.k, c.l)).collect();
        assert_eq!(cuts, vec![(1, 1), (1, 2), (2, 1), (2, 0)]);
    }

    #[test]
    fn paper_preset_matches_result_table_mask() {
        // rows L0..L3, columns pyramids 1..8; '-' cells have no output
        let mask = ["-x-x-x-x", "xxxxxxxx", "xxxxxxxx", "x-x-x-x-"];
        let cfg = NetworkConfig::paper();
        let mut expected = Vec::new();
        for (l, row) in mask.iter().enumerate() {
            for (k, ch) in row.chars().enumerate() {
                if ch == 'x' {
                    expected.push(CutPoint::new(k + 1, l));
                }
            }
        }
        let mut got = cfg.cut_points();
        got.sort();
        expected.sort();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 24);
        let ext: Vec<usize> = (0..=3).map(|l| cfg.level_extent(l).0).collect();
        assert_eq!(ext, vec![32, 16, 8, 4]);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = NetworkConfig::toy();
        c.input_h = 100;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = NetworkConfig::toy();
        c.levels = 5;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::toy();
        c.features = 32;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::toy();
        c.pyramids = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn invalid_cut_lists_valid_ones() {
        let cfg = NetworkConfig::toy();
        match cfg.cut_position(CutPoint::new(1, 0)) {
            Err(Error::InvalidCut { valid, .. }) => assert!(valid.contains("(1,1)") && valid.contains("(4,0)")),
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.cut_position(CutPoint::new(2, 0)).unwrap(), 3);
    }
}
