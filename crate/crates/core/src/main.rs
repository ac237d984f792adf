fn main() {
    std::process::exit(tactsim::cli::run(std::env::args_os()));
}
