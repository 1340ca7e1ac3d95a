fn main() {
    std::process::exit(ffuzz::cli::main());
}
