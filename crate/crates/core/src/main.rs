fn main() {
    std::process::exit(imq_core::cli::main_with(std::env::args_os()));
}
