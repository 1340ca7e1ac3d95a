// Entry point of a standalone toy target. Assembled next to `rt.rs` and the
// program module by `build_targets`.

mod program;
mod rt;

#[cfg(ff_persistent)]
#[used]
static PERSISTENT_SIGNATURE: [u8; 21] = *b"##SIG_FF_PERSISTENT##";

fn main() {
    #[cfg(ff_persistent)]
    let capable = {
        std::hint::black_box(&PERSISTENT_SIGNATURE);
        true
    };
    #[cfg(not(ff_persistent))]
    let capable = false;
    std::process::exit(rt::target_main(&program::TARGET, capable));
}
