fn main() {
    std::process::exit(polyharmonic::cli::run(std::env::args_os()));
}
