//! Uniform lattice fields with multilinear interpolation, the discretization
//! carrier for convolution against a kernel.

use std::sync::Arc;

use super::mollifier::Mollifier;
use super::RegularityError;
use crate::field::{DiffusionField, VectorField};

/// Field values sampled on a uniform node lattice over a box; `comps` values
/// per node (1 for scalars, `n` for vector fields, `n*k` for matrices).
#[derive(Debug, Clone)]
pub struct GridField {
    dim: usize,
    comps: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    nodes: Vec<usize>,     // nodes per axis, >= 2
    values: Arc<Vec<f64>>, // node-major, first axis fastest
}

impl GridField {
    pub fn sample<F>(
        dim: usize,
        comps: usize,
        lo: Vec<f64>,
        hi: Vec<f64>,
        nodes: Vec<usize>,
        field: F,
    ) -> Self
    where
        F: Fn(&[f64], &mut [f64]),
    {
        assert_eq!(lo.len(), dim);
        assert_eq!(hi.len(), dim);
        assert_eq!(nodes.len(), dim);
        assert!(nodes.iter().all(|n| *n >= 2));
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        let total: usize = nodes.iter().product();
        let mut values = vec![0.0; total * comps];
        let mut x = vec![0.0; dim];
        let mut idx = vec![0usize; dim];
        for flat in 0..total {
            let mut rem = flat;
            for a in 0..dim {
                idx[a] = rem % nodes[a];
                rem /= nodes[a];
                x[a] = lo[a] + idx[a] as f64 * (hi[a] - lo[a]) / (nodes[a] - 1) as f64;
            }
            field(&x, &mut values[flat * comps..(flat + 1) * comps]);
        }
        Self {
            dim,
            comps,
            lo,
            hi,
            nodes,
            values: Arc::new(values),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.nodes[axis] - 1) as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.spacing(a))
            .fold(0.0f64, f64::max)
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for a in (0..self.dim).rev() {
            flat = flat * self.nodes[a] + idx[a];
        }
        flat
    }

    pub fn node_value(&self, idx: &[usize]) -> &[f64] {
        let flat = self.flat_index(idx);
        &self.values[flat * self.comps..(flat + 1) * self.comps]
    }

    /// Multilinear interpolation; queries outside the box clamp to it.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.comps);
        let mut base = vec![0usize; self.dim];
        let mut frac = vec![0.0f64; self.dim];
        for a in 0..self.dim {
            let h = self.spacing(a);
            let u = (x[a] - self.lo[a]) / h;
            let cells = self.nodes[a] - 1;
            let i = u.floor();
            let (i, t) = if i < 0.0 {
                (0usize, 0.0)
            } else if i as usize >= cells {
                (cells - 1, 1.0)
            } else {
                (i as usize, u - i)
            };
            base[a] = i;
            frac[a] = t.clamp(0.0, 1.0);
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let corners = 1usize << self.dim;
        let mut idx = vec![0usize; self.dim];
        for corner in 0..corners {
            let mut weight = 1.0;
            for a in 0..self.dim {
                if corner & (1 << a) != 0 {
                    idx[a] = base[a] + 1;
                    weight *= frac[a];
                } else {
                    idx[a] = base[a];
                    weight *= 1.0 - frac[a];
                }
            }
            if weight == 0.0 {
                continue;
            }
            let vals = self.node_value(&idx);
            for c in 0..self.comps {
                out[c] += weight * vals[c];
            }
        }
    }

    /// View the lattice as a drift field (`comps` must equal `dim` of the
    /// state space the field acts on).
    pub fn as_vector_field(&self) -> VectorField {
        assert_eq!(self.comps, self.dim, "vector field needs comps == dim");
        let this = self.clone();
        VectorField::new(self.dim, move |x, out| this.interpolate(x, out))
            .with_domain(self.lo.clone(), self.hi.clone())
    }

    /// View the lattice as a diffusion coefficient with the given shape
    /// (`rows * cols` must equal `comps`).
    pub fn as_diffusion_field(&self, rows: usize, cols: usize) -> DiffusionField {
        assert_eq!(rows * cols, self.comps);
        let this = self.clone();
        DiffusionField::new(rows, cols, move |x, out| this.interpolate(x, out))
    }

    /// CSV dump: one row per node, `x_1..x_m, v_1..v_c`.
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# schema_version: 1")?;
        let coords: Vec<String> = (1..=self.dim).map(|a| format!("x_{a}")).collect();
        let comps: Vec<String> = (1..=self.comps).map(|c| format!("v_{c}")).collect();
        writeln!(w, "{},{}", coords.join(","), comps.join(","))?;
        let total: usize = self.nodes.iter().product();
        let mut idx = vec![0usize; self.dim];
        for flat in 0..total {
            let mut rem = flat;
            let mut row = Vec::with_capacity(self.dim + self.comps);
            for (a, slot) in idx.iter_mut().enumerate() {
                let i = rem % self.nodes[a];
                rem /= self.nodes[a];
                *slot = i;
                row.push(format!("{}", self.lo[a] + i as f64 * self.spacing(a)));
            }
            for v in self.node_value(&idx) {
                row.push(format!("{v}"));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Discrete mollification on the lattice: at every output node the value is
/// a kernel-weighted average of input nodes within the kernel support, with
/// the stencil weights normalized to sum to one (so constants are preserved
/// exactly and, by symmetry, affine fields as well).
///
/// The output lattice is the sub-lattice of input nodes inside
/// `[target_lo, target_hi]`; that box inflated by the kernel scale must sit
/// inside the input box.
pub fn mollify(
    field: &GridField,
    moll: &Mollifier,
    target_lo: &[f64],
    target_hi: &[f64],
) -> Result<GridField, RegularityError> {
    assert_eq!(field.dim(), moll.dim());
    let dim = field.dim();
    let scale = moll.scale();
    let spacing = field.max_spacing();
    if spacing > scale / 4.0 + 1e-15 {
        return Err(RegularityError::LatticeTooCoarse { spacing, scale });
    }
    let needed_lo: Vec<f64> = target_lo.iter().map(|v| v - scale).collect();
    let needed_hi: Vec<f64> = target_hi.iter().map(|v| v + scale).collect();
    let eps = 1e-12;
    if needed_lo
        .iter()
        .zip(field.lo())
        .any(|(need, have)| *need < *have - eps)
        || needed_hi
            .iter()
            .zip(field.hi())
            .any(|(need, have)| *need > *have + eps)
    {
        return Err(RegularityError::SupportEscape {
            needed_lo,
            needed_hi,
        });
    }

    // Output nodes: input lattice nodes inside the target box.
    let mut first = vec![0usize; dim];
    let mut count = vec![0usize; dim];
    for a in 0..dim {
        let h = field.spacing(a);
        let lo_idx = ((target_lo[a] - field.lo[a]) / h - 1e-9).ceil().max(0.0) as usize;
        let hi_idx = (((target_hi[a] - field.lo[a]) / h) + 1e-9).floor() as usize;
        let hi_idx = hi_idx.min(field.nodes[a] - 1);
        assert!(hi_idx >= lo_idx, "empty target box on axis {a}");
        first[a] = lo_idx;
        count[a] = hi_idx - lo_idx + 1;
    }

    // Stencil offsets within the kernel support, weights normalized.
    let radius: Vec<isize> = (0..dim)
        .map(|a| (scale / field.spacing(a)).floor() as isize)
        .collect();
    let mut offsets: Vec<Vec<isize>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut off = vec![0isize; dim];
    let stencil_total: usize = radius.iter().map(|r| (2 * r + 1) as usize).product();
    let mut v = vec![0.0; dim];
    for flat in 0..stencil_total {
        let mut rem = flat;
        for a in 0..dim {
            let width = (2 * radius[a] + 1) as usize;
            off[a] = rem as isize % width as isize - radius[a];
            rem /= width;
        }
        for a in 0..dim {
            v[a] = off[a] as f64 * field.spacing(a);
        }
        let w = moll.kernel(&v);
        if w > 0.0 {
            offsets.push(off.clone());
            weights.push(w);
        }
    }
    let total_w: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total_w;
    }

    let comps = field.comps();
    let out_total: usize = count.iter().product();
    let mut out_values = vec![0.0; out_total * comps];
    let mut out_idx = vec![0usize; dim];
    let mut in_idx = vec![0usize; dim];
    for flat in 0..out_total {
        let mut rem = flat;
        for a in 0..dim {
            out_idx[a] = first[a] + rem % count[a];
            rem /= count[a];
        }
        let slot = &mut out_values[flat * comps..(flat + 1) * comps];
        for (off, w) in offsets.iter().zip(&weights) {
            for a in 0..dim {
                let shifted = out_idx[a] as isize + off[a];
                debug_assert!(shifted >= 0 && (shifted as usize) < field.nodes[a]);
                in_idx[a] = shifted as usize;
            }
            let vals = field.node_value(&in_idx);
            for c in 0..comps {
                slot[c] += w * vals[c];
            }
        }
    }

    let out_lo: Vec<f64> = (0..dim)
        .map(|a| field.lo[a] + first[a] as f64 * field.spacing(a))
        .collect();
    let out_hi: Vec<f64> = (0..dim)
        .map(|a| field.lo[a] + (first[a] + count[a] - 1) as f64 * field.spacing(a))
        .collect();
    Ok(GridField {
        dim,
        comps,
        lo: out_lo,
        hi: out_hi,
        nodes: count,
        values: Arc::new(out_values),
    })
}
