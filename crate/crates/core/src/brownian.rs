//! Reproducible Brownian increments from counter-based substreams.
//!
//! Substream scheme (stable across versions): a 64-bit seed is expanded to a
//! ChaCha12 key with SplitMix64; the ChaCha stream id is `path_index`; the
//! increments of step `i` are read starting at word position
//! `i * 4 * ceil(k/2)`. Normals come from Box-Muller with a fixed draw count
//! (two `u64` per pair), so every `(seed, path_index, step)` triple addresses
//! the same bits regardless of execution order or thread count.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::grid::{GridError, TimeGrid};

const TWO_POW_53: f64 = 9007199254740992.0;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn chacha_key(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Deterministically derive an independent seed for a named pipeline role.
pub fn derive_seed(base_seed: u64, tag: u64) -> u64 {
    let mut state = base_seed ^ tag.wrapping_mul(0xd1342543de82ef95);
    splitmix64(&mut state)
}

/// `(z0, z1)` standard normals from two uniform words.
fn box_muller(a: u64, b: u64) -> (f64, f64) {
    // u1 in (0, 1] keeps the log finite; u2 in [0, 1).
    let u1 = ((a >> 11) as f64 + 1.0) / TWO_POW_53;
    let u2 = (b >> 11) as f64 / TWO_POW_53;
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

fn words_per_step(k: usize) -> u128 {
    // ceil(k/2) Box-Muller pairs, 2 u64 = 4 words each.
    (4 * k.div_ceil(2)) as u128
}

/// Substream of standard normal draws for one `(seed, path_index)` pair.
pub struct NormalSubstream {
    rng: ChaCha12Rng,
    words_per_step: u128,
    k: usize,
}

impl NormalSubstream {
    pub fn new(seed: u64, path_index: u64, k: usize) -> Self {
        assert!(k >= 1);
        let mut rng = ChaCha12Rng::from_seed(chacha_key(seed));
        rng.set_stream(path_index);
        Self {
            rng,
            words_per_step: words_per_step(k),
            k,
        }
    }

    /// Write the `k` standard normals of step `step` into `out`.
    pub fn step_normals(&mut self, step: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.k);
        self.rng.set_word_pos(step as u128 * self.words_per_step);
        let mut j = 0;
        while j < self.k {
            let (z0, z1) = box_muller(self.rng.next_u64(), self.rng.next_u64());
            out[j] = z0;
            if j + 1 < self.k {
                out[j + 1] = z1;
            }
            j += 2;
        }
    }
}

/// Discretized Brownian driver: per-step increments on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    k: usize,
    seed: u64,
    path_index: u64,
    increments: Vec<f64>, // n_steps * k, step-major
}

impl BrownianPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Increment vector `B(t_{i+1}) - B(t_i)`.
    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.k..(step + 1) * self.k]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Cumulative value `B(t_i)`; `B(t_0)` is the zero vector.
    pub fn value_at(&self, node: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.k];
        for step in 0..node {
            for (a, b) in acc.iter_mut().zip(self.increment(step)) {
                *a += b;
            }
        }
        acc
    }

    /// Cumulative values at every node for a scalar driver.
    pub fn values_scalar(&self) -> Vec<f64> {
        assert_eq!(self.k, 1);
        let mut out = Vec::with_capacity(self.grid.n_nodes());
        let mut acc = 0.0;
        out.push(acc);
        for step in 0..self.grid.n_steps() {
            acc += self.increments[step];
            out.push(acc);
        }
        out
    }

    /// Aggregate consecutive increments onto a grid `factor` times coarser.
    ///
    /// The result is a derived view of the same Brownian motion; it is not
    /// regenerable from `(seed, path_index)` alone.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianPath, GridError> {
        let grid = self.grid.coarsen(factor)?;
        let mut increments = vec![0.0; grid.n_steps() * self.k];
        for step in 0..self.grid.n_steps() {
            let coarse = step / factor;
            for j in 0..self.k {
                increments[coarse * self.k + j] += self.increments[step * self.k + j];
            }
        }
        Ok(BrownianPath {
            grid,
            k: self.k,
            seed: self.seed,
            path_index: self.path_index,
            increments,
        })
    }
}

/// Draw the Brownian driver for one path: i.i.d. `N(0, dt I_k)` increments.
pub fn sample_brownian(grid: TimeGrid, k: usize, seed: u64, path_index: u64) -> BrownianPath {
    assert!(k >= 1);
    let sqrt_dt = grid.dt().sqrt();
    let mut stream = NormalSubstream::new(seed, path_index, k);
    let mut increments = vec![0.0; grid.n_steps() * k];
    let mut z = vec![0.0; k];
    for step in 0..grid.n_steps() {
        stream.step_normals(step as u64, &mut z);
        for j in 0..k {
            increments[step * k + j] = sqrt_dt * z[j];
        }
    }
    BrownianPath {
        grid,
        k,
        seed,
        path_index,
        increments,
    }
}
