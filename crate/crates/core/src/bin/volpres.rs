fn main() {
    std::process::exit(volpres::cli::run(std::env::args_os()));
}
