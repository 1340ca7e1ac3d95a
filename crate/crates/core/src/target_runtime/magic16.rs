//! Branch ladder guarded by a fixed 16-byte key.
//!
//! Layout: the header `MG16`, then the key bytes at offsets 4..20. Each key
//! byte is compared through a cascade of distance thresholds before the
//! exact match that opens the next rung, so every step closer to the key
//! byte is a new edge and the byte that matters next has a well-defined
//! direction.

use super::rt::{Cov, TargetSpec};

pub const TARGET: TargetSpec = TargetSpec {
    name: "magic16",
    blocks: 4 + LEVEL_BLOCKS * 16 + 1,
    label_salt: 0x6d_61_67_69_63,
    run,
};

pub const HEADER: &[u8; 4] = b"MG16";
pub const KEY_OFFSET: usize = 4;
pub const MIN_LEN: usize = KEY_OFFSET + 16;
pub const KEY: [u8; 16] = [
    0x9c, 0x2e, 0xd1, 0x47, 0xb8, 0x05, 0x6a, 0xf3, 0x11, 0xe4, 0x7d, 0x58, 0xc6, 0x23, 0x8f, 0xa9,
];

/// Distance thresholds checked, outermost first, before the exact match.
const TIERS: [u32; 6] = [64, 32, 16, 8, 4, 2];
const LEVEL_BLOCKS: u32 = 2 + TIERS.len() as u32 + 1;

const ENTRY: u32 = 0;
const SHORT: u32 = 1;
const HEADER_OK: u32 = 2;
const HEADER_BAD: u32 = 3;
const WIN: u32 = 4 + LEVEL_BLOCKS * 16;

fn run(input: &[u8], cov: &mut Cov) {
    cov.block(ENTRY);
    if input.len() < MIN_LEN {
        cov.block(SHORT);
        return;
    }
    if &input[..4] != HEADER {
        cov.block(HEADER_BAD);
        return;
    }
    cov.block(HEADER_OK);
    for (level, &want) in KEY.iter().enumerate() {
        let base = 4 + level as u32 * LEVEL_BLOCKS;
        cov.block(base);
        let d = (input[KEY_OFFSET + level] as i32 - want as i32).unsigned_abs();
        let mut rung = base + 1;
        for &t in TIERS.iter() {
            if d >= t {
                cov.block(base + LEVEL_BLOCKS - 1);
                return;
            }
            cov.block(rung);
            rung += 1;
        }
        if d != 0 {
            cov.block(base + LEVEL_BLOCKS - 1);
            return;
        }
        // exact match
        cov.block(rung);
    }
    cov.block(WIN);
}

/// The full key embedded in a minimal valid input.
pub fn solved_input() -> Vec<u8> {
    let mut v = HEADER.to_vec();
    v.extend_from_slice(&KEY);
    v
}
