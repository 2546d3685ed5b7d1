fn main() {
    std::process::exit(scenecap::cli::run(std::env::args_os()));
}
