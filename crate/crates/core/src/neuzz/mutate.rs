//! Gradient-guided fixed-length mutation and insertion/deletion
//! variant-length mutation.

use rand::Rng;

use crate::error::{Error, Result, Warning};

use super::model::{sign, ByteGradient};

/// Step sizes applied to the selected bytes, in order.
pub const STEPS: [u8; 4] = [1, 16, 64, 255];
/// Insertion and deletion variants produced per call.
pub const VARIANT_OPS: usize = 4;
/// Largest inserted or deleted block.
pub const MAX_BLOCK: usize = 16;

/// Byte positions by decreasing |gradient|, ties by ascending index. Bytes
/// whose sign is 0 are never ranked.
pub fn rank_positions(grad: &ByteGradient) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..grad.len()).filter(|&i| sign(grad.values[i]) != 0.0).collect();
    idx.sort_by(|&a, &b| grad.values[b].abs().total_cmp(&grad.values[a].abs()).then(a.cmp(&b)));
    idx
}

/// Steps the top-`k` bytes along the gradient sign. For every prefix of the
/// ranked positions and every step size one variant is emitted, with byte
/// arithmetic clamped to 0..=255. Variants equal to the input are dropped.
/// Every variant has the input's length.
pub fn mutate_fixed_length(input: &[u8], grad: &ByteGradient, k: usize) -> Result<(Vec<Vec<u8>>, Option<Warning>)> {
    if grad.len() != input.len() {
        return Err(Error::Shape(format!("gradient has {} entries, input {} bytes", grad.len(), input.len())));
    }
    let mut warning = None;
    let mut k = k;
    if k > input.len() {
        warning = Some(Warning::TopKClamped { requested: k, clamped_to: input.len() }.emit());
        k = input.len();
    }
    let positions = rank_positions(grad);
    let top = &positions[..k.min(positions.len())];
    let mut out = Vec::new();
    for prefix in 1..=top.len() {
        for &step in &STEPS {
            let mut v = input.to_vec();
            for &p in &top[..prefix] {
                v[p] = if grad.values[p] > 0.0 { v[p].saturating_add(step) } else { v[p].saturating_sub(step) };
            }
            if v != input {
                out.push(v);
            }
        }
    }
    Ok((out, warning))
}

/// Emits insertion variants (1..=16 random bytes at a random offset) and
/// deletion variants (a random block removed). Inputs shorter than two
/// bytes get insertions only. No variant keeps the input's length.
pub fn mutate_variant_length<R: Rng>(input: &[u8], rng: &mut R) -> (Vec<Vec<u8>>, Option<Warning>) {
    let mut out = Vec::with_capacity(2 * VARIANT_OPS);
    for _ in 0..VARIANT_OPS {
        let n = rng.gen_range(1..=MAX_BLOCK);
        let at = rng.gen_range(0..=input.len());
        let mut v = Vec::with_capacity(input.len() + n);
        v.extend_from_slice(&input[..at]);
        v.extend((0..n).map(|_| rng.gen::<u8>()));
        v.extend_from_slice(&input[at..]);
        out.push(v);
    }
    if input.len() < 2 {
        return (out, Some(Warning::DeletionSkipped { len: input.len() }.emit()));
    }
    for _ in 0..VARIANT_OPS {
        let n = rng.gen_range(1..=MAX_BLOCK.min(input.len() - 1));
        let at = rng.gen_range(0..=input.len() - n);
        let mut v = input[..at].to_vec();
        v.extend_from_slice(&input[at + n..]);
        out.push(v);
    }
    (out, None)
}
