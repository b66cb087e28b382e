fn main() {
    std::process::exit(sepsplit::cli::run(std::env::args_os()));
}
