fn main() {
    std::process::exit(cvsa_service::cli::run(std::env::args_os()));
}
