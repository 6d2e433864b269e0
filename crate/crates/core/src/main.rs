fn main() {
    std::process::exit(fuzzy_fnd::cli::main_with(std::env::args_os()));
}
