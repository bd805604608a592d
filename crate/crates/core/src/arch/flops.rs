use super::config::{CutPoint, NetworkConfig};
use super::model::entry_stages;
use crate::error::Result;

/// Multiply-accumulates of a single-image forward pass up to and including
/// block `cut`, counting every convolution.
pub fn count_flops(cfg: &NetworkConfig, cut: CutPoint) -> Result<u64> {
    cfg.validate()?;
    let stop = cfg.cut_position(cut)?;
    let (h, w) = (cfg.input_h as u64, cfg.input_w as u64);
    let c0 = cfg.entry_channels[0] as u64;
    let mut total = (h / 2) * (w / 2) * 49 * 3 * c0;
    for (i, (cin, a, b)) in entry_stages(cfg).into_iter().enumerate() {
        let (cin, a, b) = (cin as u64, a as u64, b as u64);
        let div = match i {
            0 => 2,
            1 | 2 => 4,
            _ => 8,
        };
        let hw = (h / div) * (w / div);
        total += hw * (cin * a + 9 * a * b);
        if cin != b {
            total += hw * cin * b;
        }
    }
    let (nf, n) = (cfg.features as u64, cfg.joints as u64);
    let separable = 9 * nf + nf * nf;
    for c in cfg.cut_points().into_iter().take(stop + 1) {
        let (lh, lw) = cfg.level_extent(c.l);
        let hw = (lh * lw) as u64;
        total += hw * separable;
        if c.k >= 2 {
            total += hw * nf * nf;
        }
        total += hw * (separable + 4 * nf * n);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_over_cuts() {
        for cfg in [NetworkConfig::toy(), NetworkConfig::paper()] {
            let counts: Vec<u64> = cfg.cut_points().into_iter().map(|c| count_flops(&cfg, c).unwrap()).collect();
            assert!(counts.windows(2).all(|w| w[0] < w[1]));
        }
        let p = NetworkConfig::paper();
        assert!(count_flops(&p, CutPoint::new(1, 1)).unwrap() < count_flops(&p, CutPoint::new(8, 0)).unwrap());
        assert!(count_flops(&p, CutPoint::new(8, 3)).is_err());
    }
}
