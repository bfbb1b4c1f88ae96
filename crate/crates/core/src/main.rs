fn main() {
    std::process::exit(sobolev::cli::run(std::env::args_os()));
}
