fn main() {
    std::process::exit(sirtv::cli::run(std::env::args_os()));
}
