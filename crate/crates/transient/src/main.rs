fn main() {
    std::process::exit(transient::cli::run(std::env::args_os()));
}
