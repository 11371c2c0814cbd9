fn main() {
    std::process::exit(heat_spde::cli::run(std::env::args_os()));
}
