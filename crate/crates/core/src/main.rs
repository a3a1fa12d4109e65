fn main() {
    std::process::exit(parapath::cli::main_from(std::env::args_os()));
}
