fn main() {
    std::process::exit(collective_choice::cli::main_from_env());
}
