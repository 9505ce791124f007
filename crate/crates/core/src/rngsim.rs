//! Reproducible random streams.
//!
//! A [`SeedTree`] is a master seed plus a path of `(label, index)` pairs.
//! The path is hashed (SHA-256) into a 256-bit ChaCha20 key, so every node of
//! the tree names its own counter-based stream. Derivation is stateless: the
//! stream for replicate 17 is the same whether replicates run in order, in
//! reverse, or spread over any number of threads.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

const DOMAIN_TAG: &[u8] = b"condreg/seedtree/v1";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SeedTree {
    master: u64,
    path: Vec<(String, u64)>,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            path: Vec::new(),
        }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Child node `label/index`. Pure: same arguments give the same child.
    pub fn derive(&self, label: &str, index: u64) -> SeedTree {
        let mut path = self.path.clone();
        path.push((label.to_owned(), index));
        SeedTree {
            master: self.master,
            path,
        }
    }

    fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(DOMAIN_TAG);
        h.update(self.master.to_le_bytes());
        for (label, index) in &self.path {
            // length prefix keeps ("ab", 1) and ("a", ...) from colliding
            h.update((label.len() as u64).to_le_bytes());
            h.update(label.as_bytes());
            h.update(index.to_le_bytes());
        }
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        key
    }

    /// A fresh stream positioned at counter zero.
    pub fn stream(&self) -> Stream {
        Stream {
            rng: ChaCha20Rng::from_seed(self.key()),
            spare_normal: None,
        }
    }
}

/// A ChaCha20 keystream with uniform and normal helpers.
#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl Stream {
    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1].
    pub fn uniform_pos(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.rng.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal by the Box–Muller transform of two uniforms; the
    /// second variate of each pair is cached for the next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_pos();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    pub fn uniforms(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn sign(&mut self) -> f64 {
        if self.rng.next_u32() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Runs `f(stream, index)` for `index in 0..count`, in parallel batches of
/// `batch` items. Batch `b` draws from `seed.derive(label, b)`, so the output
/// is a pure function of `seed` whatever the thread count.
pub fn par_batched<T, E, F>(count: usize, batch: usize, seed: &SeedTree, label: &str, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(&mut Stream, usize) -> Result<T, E> + Sync,
{
    use rayon::prelude::*;
    let batch = batch.max(1);
    let parts: Vec<Result<Vec<T>, E>> = (0..count.div_ceil(batch))
        .into_par_iter()
        .map(|b| {
            let mut st = seed.derive(label, b as u64).stream();
            let start = b * batch;
            let end = (start + batch).min(count);
            (start..end).map(|i| f(&mut st, i)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
