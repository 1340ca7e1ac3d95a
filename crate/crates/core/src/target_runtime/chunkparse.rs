//! Binary chunk container parser.
//!
//! Format: the magic `CHNK`, then a sequence of chunks `[type u8][len u16 le]
//! [payload]`. Chunk type `0xFF` is a planted abort; chunk type `0xFE` whose
//! payload starts with `HANG` is a planted infinite loop. Inputs shorter
//! than the magic take a separate early-exit branch.

use super::rt::{Cov, TargetSpec};

pub const TARGET: TargetSpec = TargetSpec {
    name: "chunkparse",
    blocks: 45,
    label_salt: 0x63_68_75_6e_6b,
    run,
};

pub const MAGIC: &[u8; 4] = b"CHNK";
pub const TYPE_END: u8 = 0x00;
pub const TYPE_TEXT: u8 = 0x01;
pub const TYPE_INT: u8 = 0x02;
pub const TYPE_NEST: u8 = 0x03;
pub const TYPE_CHECKSUM: u8 = 0x04;
pub const TYPE_PAIR: u8 = 0x05;
pub const TYPE_LOOP: u8 = 0xFE;
pub const TYPE_ABORT: u8 = 0xFF;
pub const MAX_DEPTH: u32 = 3;

const ENTRY: u32 = 0;
const SHORT: u32 = 1;
const MAGIC_C: u32 = 2;
const MAGIC_H: u32 = 3;
const MAGIC_N: u32 = 4;
const MAGIC_K: u32 = 5;
const BAD_MAGIC: u32 = 6;
const CHUNK_HEAD: u32 = 7;
const TRUNC_HEADER: u32 = 8;
const END_OF_INPUT: u32 = 9;
const ABORT: u32 = 10;
const TRUNC_PAYLOAD: u32 = 11;
const END: u32 = 12;
const TEXT: u32 = 13;
const TEXT_PRINT: u32 = 14;
const TEXT_BINARY: u32 = 15;
const TEXT_EMPTY: u32 = 16;
const INT: u32 = 17;
const INT_ZERO: u32 = 18;
const INT_SMALL: u32 = 19;
const INT_MAGIC: u32 = 20;
const INT_BIG: u32 = 21;
const INT_BAD_LEN: u32 = 22;
const NEST: u32 = 23;
const NEST_TOO_DEEP: u32 = 24;
const NEST_DONE: u32 = 25;
const SUM: u32 = 26;
const SUM_EMPTY: u32 = 27;
const SUM_OK: u32 = 28;
const SUM_BAD: u32 = 29;
const PAIR: u32 = 30;
const PAIR_ASC: u32 = 31;
const PAIR_DESC: u32 = 32;
const PAIR_EQ: u32 = 33;
const PAIR_SHORT: u32 = 34;
const LOOP: u32 = 35;
const LOOP_ARMED: u32 = 36;
const LOOP_BODY: u32 = 37;
const LOOP_SKIP: u32 = 38;
const UNKNOWN: u32 = 39;
const CHUNK_DONE: u32 = 40;
const NO_CHUNKS: u32 = 41;
const MANY_CHUNKS: u32 = 42;
const TRAILING: u32 = 43;
const EXIT: u32 = 44;

fn run(input: &[u8], cov: &mut Cov) {
    cov.block(ENTRY);
    if input.len() < MAGIC.len() {
        cov.block(SHORT);
        return;
    }
    let magic_blocks = [MAGIC_C, MAGIC_H, MAGIC_N, MAGIC_K];
    for (i, &want) in MAGIC.iter().enumerate() {
        if input[i] != want {
            cov.block(BAD_MAGIC);
            return;
        }
        cov.block(magic_blocks[i]);
    }
    let body = &input[MAGIC.len()..];
    let (chunks, consumed, stopped) = parse_chunks(body, 0, cov);
    if stopped {
        return;
    }
    if chunks == 0 {
        cov.block(NO_CHUNKS);
    } else if chunks > 4 {
        cov.block(MANY_CHUNKS);
    }
    if consumed < body.len() {
        cov.block(TRAILING);
    }
    cov.block(EXIT);
}

/// Returns (chunks parsed, bytes consumed, fault raised).
fn parse_chunks(mut data: &[u8], depth: u32, cov: &mut Cov) -> (u32, usize, bool) {
    let total = data.len();
    let mut chunks = 0u32;
    loop {
        cov.block(CHUNK_HEAD);
        if data.is_empty() {
            cov.block(END_OF_INPUT);
            break;
        }
        let ty = data[0];
        if ty == TYPE_ABORT {
            cov.block(ABORT);
            cov.crash();
            return (chunks, total - data.len(), true);
        }
        if data.len() < 3 {
            cov.block(TRUNC_HEADER);
            break;
        }
        let len = u16::from_le_bytes([data[1], data[2]]) as usize;
        if data.len() - 3 < len {
            cov.block(TRUNC_PAYLOAD);
            break;
        }
        let payload = &data[3..3 + len];
        data = &data[3 + len..];
        chunks += 1;
        match ty {
            TYPE_END => {
                cov.block(END);
                break;
            }
            TYPE_TEXT => {
                cov.block(TEXT);
                if payload.is_empty() {
                    cov.block(TEXT_EMPTY);
                }
                for &b in payload {
                    if (0x20..0x7f).contains(&b) {
                        cov.block(TEXT_PRINT);
                    } else {
                        cov.block(TEXT_BINARY);
                    }
                }
            }
            TYPE_INT => {
                cov.block(INT);
                if payload.len() == 4 {
                    let v = u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]);
                    if v == 0 {
                        cov.block(INT_ZERO);
                    } else if v < 1000 {
                        cov.block(INT_SMALL);
                    } else if v == 0xDEAD_BEEF {
                        cov.block(INT_MAGIC);
                    } else {
                        cov.block(INT_BIG);
                    }
                } else {
                    cov.block(INT_BAD_LEN);
                }
            }
            TYPE_NEST => {
                cov.block(NEST);
                if depth >= MAX_DEPTH {
                    cov.block(NEST_TOO_DEEP);
                } else {
                    let (_, _, stopped) = parse_chunks(payload, depth + 1, cov);
                    if stopped {
                        return (chunks, total - data.len(), true);
                    }
                    cov.block(NEST_DONE);
                }
            }
            TYPE_CHECKSUM => {
                cov.block(SUM);
                if payload.is_empty() {
                    cov.block(SUM_EMPTY);
                } else if payload[1..].iter().fold(0u8, |a, &b| a ^ b) == payload[0] {
                    cov.block(SUM_OK);
                } else {
                    cov.block(SUM_BAD);
                }
            }
            TYPE_PAIR => {
                cov.block(PAIR);
                if payload.len() >= 2 {
                    if payload[0] < payload[1] {
                        cov.block(PAIR_ASC);
                    } else if payload[0] > payload[1] {
                        cov.block(PAIR_DESC);
                    } else {
                        cov.block(PAIR_EQ);
                    }
                } else {
                    cov.block(PAIR_SHORT);
                }
            }
            TYPE_LOOP => {
                cov.block(LOOP);
                if payload.starts_with(b"HANG") {
                    cov.block(LOOP_ARMED);
                    cov.hang(LOOP_BODY);
                    return (chunks, total - data.len(), true);
                }
                cov.block(LOOP_SKIP);
            }
            _ => cov.block(UNKNOWN),
        }
        cov.block(CHUNK_DONE);
    }
    (chunks, total - data.len(), false)
}
