fn main() {
    std::process::exit(mpseg::cli::run(std::env::args_os()));
}
