fn main() {
    std::process::exit(cadseq::cli::run(std::env::args_os()));
}
