//! Articulated 17-joint figure and forward kinematics.

use rand::Rng;

pub const NUM_JOINTS: usize = 17;
pub const ROOT: usize = 0;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
];

/// Joint tree with rest-pose bone vectors and rotation limits.
///
/// Body frame: x to the viewer's right, y down, z away from the camera.
/// Each bone `parent → j` is oriented by three angles (about x, y, z, in
/// that order) applied in the parent's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureTemplate {
    pub parents: [Option<usize>; NUM_JOINTS],
    /// Rest offset of each joint from its parent (mm); zero for the root.
    pub offsets: [[f64; 3]; NUM_JOINTS],
    /// `[(min, max); 3]` per bone, radians.
    pub limits: [[(f64, f64); 3]; NUM_JOINTS],
}

impl Default for FigureTemplate {
    fn default() -> Self {
        Self::human()
    }
}

impl FigureTemplate {
    pub fn human() -> Self {
        let p = |i: usize| Some(i);
        let parents = [None, p(0), p(1), p(2), p(0), p(4), p(5), p(0), p(7), p(8), p(9), p(8), p(11), p(12), p(8), p(14), p(15)];
        let offsets = [
            [0.0, 0.0, 0.0],
            [-130.0, 0.0, 0.0],
            [0.0, 450.0, 0.0],
            [0.0, 440.0, 0.0],
            [130.0, 0.0, 0.0],
            [0.0, 450.0, 0.0],
            [0.0, 440.0, 0.0],
            [0.0, -230.0, 0.0],
            [0.0, -250.0, 0.0],
            [0.0, -110.0, 0.0],
            [0.0, -120.0, 0.0],
            [150.0, 0.0, 0.0],
            [0.0, 280.0, 0.0],
            [0.0, 250.0, 0.0],
            [-150.0, 0.0, 0.0],
            [0.0, 280.0, 0.0],
            [0.0, 250.0, 0.0],
        ];
        let fixed = [(0.0, 0.0); 3];
        let sym = |a: f64, b: f64, c: f64| [(-a, a), (-b, b), (-c, c)];
        let limits = [
            fixed,
            fixed,
            [(-1.2, 0.4), (-0.3, 0.3), (-0.5, 0.5)],
            [(0.0, 1.8), (0.0, 0.0), (0.0, 0.0)],
            fixed,
            [(-1.2, 0.4), (-0.3, 0.3), (-0.5, 0.5)],
            [(0.0, 1.8), (0.0, 0.0), (0.0, 0.0)],
            sym(0.3, 0.3, 0.2),
            sym(0.3, 0.3, 0.2),
            sym(0.3, 0.2, 0.2),
            sym(0.4, 0.4, 0.3),
            sym(0.15, 0.15, 0.15),
            [(-1.5, 1.5), (-0.5, 0.5), (-0.3, 1.6)],
            [(-2.0, 0.0), (-0.5, 0.5), (0.0, 0.0)],
            sym(0.15, 0.15, 0.15),
            [(-1.5, 1.5), (-0.5, 0.5), (-1.6, 0.3)],
            [(-2.0, 0.0), (-0.5, 0.5), (0.0, 0.0)],
        ];
        Self { parents, offsets, limits }
    }

    pub fn bone_length(&self, j: usize) -> f64 {
        norm(self.offsets[j])
    }

    /// Joint positions (mm, root at origin) for per-bone angles and a
    /// global root rotation.
    pub fn forward_kinematics(&self, angles: &[[f64; 3]; NUM_JOINTS], root: Mat3) -> [[f64; 3]; NUM_JOINTS] {
        let mut global = [IDENTITY; NUM_JOINTS];
        let mut pos = [[0.0; 3]; NUM_JOINTS];
        global[ROOT] = root;
        // parents always precede children in the joint order
        for j in 1..NUM_JOINTS {
            let p = self.parents[j].expect("non-root joint has a parent");
            let a = angles[j];
            let local = mat_mul(mat_mul(rot_x(a[0]), rot_y(a[1])), rot_z(a[2]));
            global[j] = mat_mul(global[p], local);
            let off = mat_vec(global[j], self.offsets[j]);
            pos[j] = [pos[p][0] + off[0], pos[p][1] + off[1], pos[p][2] + off[2]];
        }
        pos
    }

    /// Random joint angles within the limits and a random body orientation.
    pub fn sample_angles<R: Rng>(&self, rng: &mut R) -> ([[f64; 3]; NUM_JOINTS], Mat3) {
        let mut angles = [[0.0; 3]; NUM_JOINTS];
        for (a, lim) in angles.iter_mut().zip(&self.limits) {
            for (v, &(lo, hi)) in a.iter_mut().zip(lim) {
                *v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            }
        }
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let pitch = rng.random_range(-0.2..0.2);
        let roll = rng.random_range(-0.15..0.15);
        (angles, mat_mul(mat_mul(rot_z(roll), rot_x(pitch)), rot_y(yaw)))
    }

    /// Random pose in the camera frame (mm): root depth in 4000..=6000 and
    /// the figure's bounding box centred on the optical axis.
    pub fn sample_figure<R: Rng>(&self, rng: &mut R) -> [[f64; 3]; NUM_JOINTS] {
        let (angles, root) = self.sample_angles(rng);
        let mut pos = self.forward_kinematics(&angles, root);
        let z_root = rng.random_range(4000.0..=6000.0);
        let mut shift = [0.0; 2];
        for (axis, s) in shift.iter_mut().enumerate() {
            let lo = pos.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
            let hi = pos.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
            *s = -(lo + hi) / 2.0 + rng.random_range(-100.0..100.0);
        }
        for p in &mut pos {
            p[0] += shift[0];
            p[1] += shift[1];
            p[2] += z_root;
        }
        pos
    }
}

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

pub fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_mul(a: Mat3, b: Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
