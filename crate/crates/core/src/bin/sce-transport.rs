fn main() {
    std::process::exit(sce_transport::cli::main_from_env());
}
