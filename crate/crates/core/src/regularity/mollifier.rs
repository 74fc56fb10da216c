//! The standard bump mollifier with quadrature normalization.

use super::RegularityError;

/// Unnormalized bump `exp(-1/(1-|u|^2))` inside the unit ball, 0 outside.
pub fn bump_raw(u: &[f64]) -> f64 {
    let r2: f64 = u.iter().map(|v| v * v).sum();
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Walk a tensor midpoint grid with `res` cells per axis over `[-1, 1]^dim`,
/// calling `visit(point, cell_volume)`.
fn midpoint_quadrature<F: FnMut(&[f64])>(dim: usize, res: usize, mut visit: F) {
    let w = 2.0 / res as f64;
    let total = res.pow(dim as u32);
    let mut point = vec![0.0; dim];
    for flat in 0..total {
        let mut rem = flat;
        for slot in point.iter_mut() {
            let i = rem % res;
            rem /= res;
            *slot = -1.0 + (i as f64 + 0.5) * w;
        }
        visit(&point);
    }
}

fn bump_mass(dim: usize, res: usize) -> f64 {
    let cell = (2.0 / res as f64).powi(dim as i32);
    let mut acc = 0.0;
    midpoint_quadrature(dim, res, |p| acc += bump_raw(p));
    acc * cell
}

/// Compactly supported smooth kernel of unit mass: `c * exp(-1/(1-|u|^2))`
/// inside the unit ball, rescaled as `phi_scale(v) = scale^-m phi(v/scale)`.
#[derive(Debug, Clone)]
pub struct Mollifier {
    dim: usize,
    scale: f64,
    norm_const: f64,
    quad_res: usize,
}

impl Mollifier {
    /// Normalization by midpoint quadrature at `quad_res` cells per axis;
    /// fails if doubling the resolution still moves the mass by more than
    /// 1e-6 relative.
    pub fn new(dim: usize, scale: f64, quad_res: usize) -> Result<Self, RegularityError> {
        assert!(dim >= 1);
        assert!(scale > 0.0);
        assert!(
            quad_res >= 32,
            "quadrature needs at least 32 cells per axis"
        );
        let coarse = bump_mass(dim, quad_res);
        let fine = bump_mass(dim, quad_res * 2);
        let delta = (coarse / fine - 1.0).abs();
        if delta > 1e-6 {
            return Err(RegularityError::QuadratureUnderresolved { delta });
        }
        Ok(Self {
            dim,
            scale,
            norm_const: 1.0 / fine,
            quad_res,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn quad_res(&self) -> usize {
        self.quad_res
    }

    /// Normalized profile on the unit ball.
    pub fn profile(&self, u: &[f64]) -> f64 {
        self.norm_const * bump_raw(u)
    }

    /// Scaled kernel `scale^-m * profile(v / scale)`.
    pub fn kernel(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        let scaled: Vec<f64> = v.iter().map(|x| x / self.scale).collect();
        self.profile(&scaled) / self.scale.powi(self.dim as i32)
    }

    /// Mass of the normalized profile recomputed at an arbitrary quadrature
    /// resolution (test hook; 1 up to quadrature error).
    pub fn mass_by_quadrature(&self, res: usize) -> f64 {
        self.norm_const * bump_mass(self.dim, res)
    }

    /// Mass of the scaled kernel over its support by midpoint quadrature.
    pub fn scaled_mass_by_quadrature(&self, res: usize) -> f64 {
        let cell = (2.0 * self.scale / res as f64).powi(self.dim as i32);
        let mut acc = 0.0;
        let mut v = vec![0.0; self.dim];
        let total = res.pow(self.dim as u32);
        let w = 2.0 * self.scale / res as f64;
        for flat in 0..total {
            let mut rem = flat;
            for slot in v.iter_mut() {
                let i = rem % res;
                rem /= res;
                *slot = -self.scale + (i as f64 + 0.5) * w;
            }
            acc += self.kernel(&v);
        }
        acc * cell
    }

    /// `int phi(u) |u| du` over the unit ball (quadrature); the mollified
    /// value of `|x|` at the kink is `scale` times this.
    pub fn abs_moment(&self, res: usize) -> f64 {
        let cell = (2.0 / res as f64).powi(self.dim as i32);
        let mut acc = 0.0;
        midpoint_quadrature(self.dim, res, |p| {
            let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            acc += self.profile(p) * r;
        });
        acc * cell
    }
}
