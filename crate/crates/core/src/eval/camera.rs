use crate::error::{arg_err, Error, Result};

/// Depth range, in millimeters, covered by normalized relative depth `[0, 1]`.
pub const DEPTH_RANGE_MM: f64 = 2000.0;

/// Pinhole camera with a known absolute root depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Absolute depth of the root joint (mm).
    pub z_root: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, z_root: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(arg_err("camera", format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if width == 0 || height == 0 {
            return Err(arg_err("camera", "zero image size"));
        }
        Ok(Self { fx, fy, cx, cy, width, height, z_root })
    }

    /// Camera with its principal point at the image center.
    pub fn centered(f: f64, width: usize, height: usize, z_root: f64) -> Result<Self> {
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height, z_root)
    }

    /// Pixel coordinates of a camera-frame point (mm).
    pub fn project(&self, p: [f64; 3]) -> Result<[f64; 2]> {
        if p[2] <= 0.0 {
            return Err(Error::BehindCamera { joint: 0, z: p[2] });
        }
        Ok([self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy])
    }

    /// Normalized image coordinates: pixels divided by the image size.
    pub fn project_normalized(&self, p: [f64; 3]) -> Result<[f64; 2]> {
        let [u, v] = self.project(p)?;
        Ok([u / self.width as f64, v / self.height as f64])
    }

    /// Camera-frame point at pixel `(u, v)` and absolute depth `z`.
    pub fn unproject_px(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }

    /// Millimeter joints from normalized image coordinates and normalized
    /// relative depths (root at 0.5, 2 m range).
    pub fn inverse_project(&self, xy_norm: &[[f64; 2]], z_norm: &[f64]) -> Result<Vec<[f64; 3]>> {
        if xy_norm.len() != z_norm.len() {
            return Err(arg_err("inverse_project", format!("{} xy vs {} z", xy_norm.len(), z_norm.len())));
        }
        xy_norm
            .iter()
            .zip(z_norm)
            .enumerate()
            .map(|(j, (xy, &zn))| {
                let z = self.z_root + (zn - 0.5) * DEPTH_RANGE_MM;
                if z <= 0.0 {
                    return Err(Error::BehindCamera { joint: j, z });
                }
                Ok(self.unproject_px(xy[0] * self.width as f64, xy[1] * self.height as f64, z))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraModel {
        CameraModel::new(1150.0, 1150.0, 500.0, 500.0, 1000, 1000, 5000.0).unwrap()
    }

    #[test]
    fn axis_ray_and_depth_range() {
        let c = cam();
        let p = c.inverse_project(&[[0.5, 0.5]], &[0.5]).unwrap();
        assert_eq!(p[0], [0.0, 0.0, 5000.0]);
        let p = c.inverse_project(&[[0.5, 0.5]], &[0.75]).unwrap();
        assert_eq!(p[0][2], 5500.0);
    }

    #[test]
    fn round_trip() {
        let c = cam();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let xy = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let zn: f64 = rng.random_range(0.0..1.0);
            let p = c.inverse_project(&[xy], &[zn]).unwrap()[0];
            let [u, v] = c.project(p).unwrap();
            assert!((u - xy[0] * 1000.0).abs() < 1e-6 && (v - xy[1] * 1000.0).abs() < 1e-6);
        }
    }

    #[test]
    fn errors() {
        assert!(CameraModel::new(0.0, 1.0, 0.0, 0.0, 10, 10, 1.0).is_err());
        let near = CameraModel { z_root: 500.0, ..cam() };
        assert!(matches!(near.inverse_project(&[[0.5, 0.5]], &[0.0]), Err(Error::BehindCamera { .. })));
        assert!(cam().project([0.0, 0.0, -1.0]).is_err());
    }
}
