fn main() {
    std::process::exit(aggbuf::cli::run(std::env::args_os()));
}
