fn main() {
    std::process::exit(segnerf::cli::run(std::env::args_os()));
}
