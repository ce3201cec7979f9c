fn main() {
    std::process::exit(focal_depth::cli::run(std::env::args_os()));
}
