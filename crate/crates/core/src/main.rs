fn main() {
    std::process::exit(tetflat::cli::run(std::env::args_os()));
}
