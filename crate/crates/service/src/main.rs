fn main() {
    std::process::exit(pubbie_service::cli::main());
}
