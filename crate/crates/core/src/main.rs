fn main() {
    std::process::exit(dpnsim::cli::main_from_env());
}
