fn main() {
    std::process::exit(nvstrain::cli::run(std::env::args_os()));
}
