//! Erdős-Rényi ("urand") edge-list generator.
//!
//! The generator is PCG-XSL-RR 128/64 (`Pcg64`) with state = `seed` and the
//! reference default stream increment. Each edge draws its source then its
//! destination as the top `scale` bits of successive 64-bit outputs, so the
//! draw is exactly uniform on `[0, 2^scale)` and reproducible from the
//! algorithm description alone.

use rand_core::Rng;
use rand_pcg::Pcg64;

use super::{EdgeList, GraphError, VertexId};

/// Average out-degree used when none is given.
pub const DEFAULT_AVG_DEGREE: usize = 16;

const DEFAULT_STREAM: u128 = 0x0a02_bdbf_7bb3_c0a7_ac28_fa16_a64a_bf96;

/// Seedable, splittable 64-bit generator shared by graph generation and
/// root selection.
#[derive(Debug, Clone)]
pub struct UrandRng(Pcg64);

impl UrandRng {
    pub fn new(seed: u64) -> Self {
        UrandRng(Pcg64::new(seed as u128, DEFAULT_STREAM))
    }

    /// Independent generator on stream `stream` with the same seed.
    pub fn split(seed: u64, stream: u64) -> Self {
        UrandRng(Pcg64::new(seed as u128, DEFAULT_STREAM ^ ((stream as u128) << 1)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform draw on `[0, 2^bits)`, `bits <= 64`.
    pub fn next_bits(&mut self, bits: u32) -> u64 {
        let x = self.next_u64();
        if bits == 0 {
            0
        } else {
            x >> (64 - bits)
        }
    }

    /// Uniform draw on `[0, bound)` by rejection; `bound > 0`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % bound;
            }
        }
    }
}

/// Generates a directed urand graph with `2^scale` vertices and
/// `2^scale * avg_degree` edges drawn with replacement.
pub fn generate_urand(scale: u32, avg_degree: usize, seed: u64) -> Result<EdgeList, GraphError> {
    if scale > VertexId::BITS {
        return Err(GraphError::Resource(format!(
            "scale {scale} exceeds the {}-bit vertex id space",
            VertexId::BITS
        )));
    }
    let n = 1usize
        .checked_shl(scale)
        .filter(|_| scale < usize::BITS)
        .ok_or_else(|| GraphError::Resource(format!("2^{scale} vertices overflow usize")))?;
    let m = n
        .checked_mul(avg_degree)
        .ok_or_else(|| GraphError::Resource(format!("2^{scale} * {avg_degree} edges overflow usize")))?;

    let mut edges = Vec::new();
    edges
        .try_reserve_exact(m)
        .map_err(|e| GraphError::Resource(format!("{m} edges: {e}")))?;

    let mut rng = UrandRng::new(seed);
    for _ in 0..m {
        let src = rng.next_bits(scale) as VertexId;
        let dst = rng.next_bits(scale) as VertexId;
        edges.push((src, dst));
    }
    Ok(EdgeList { n, edges })
}
