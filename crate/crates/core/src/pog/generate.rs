use rayon::prelude::*;

use super::{Autoencoder, Generator, STREAM_GENERATE};
use crate::corpus::UNK_ID;
use crate::error::Result;
use crate::numerics::{Real, Rng, Tensor};

const CHUNK: usize = 256;

/// Decode `n` generated latents into id sequences.
///
/// Noise is drawn sequentially from the seeded stream, so the output does
/// not depend on how decoding is parallelised. A sequence that decodes to
/// nothing becomes a single UNK.
pub fn generate<F: Real>(g: &Generator<F>, ae: &Autoencoder<F>, n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = Rng::stream(seed, STREAM_GENERATE);
    let noise: Vec<Tensor<F>> = (0..n)
        .step_by(CHUNK)
        .map(|start| g.sample_noise(CHUNK.min(n - start), &mut rng))
        .collect();
    let chunks: Vec<Vec<Vec<usize>>> = noise
        .par_iter()
        .map(|eps| ae.decode_argmax(&g.forward(eps)?))
        .collect::<Result<_>>()?;
    Ok(chunks
        .into_iter()
        .flatten()
        .map(|seq| if seq.is_empty() { vec![UNK_ID] } else { seq })
        .collect())
}
