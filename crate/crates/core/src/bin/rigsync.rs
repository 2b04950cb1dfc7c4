fn main() {
    std::process::exit(rigsync::cli::run(std::env::args_os()));
}
