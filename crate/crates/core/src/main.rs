fn main() {
    std::process::exit(kernelmix::cli::run(std::env::args_os()));
}
