fn main() {
    std::process::exit(cpguard::cli::run(std::env::args_os()));
}
