fn main() {
    std::process::exit(curate::cli::run(std::env::args_os()));
}
