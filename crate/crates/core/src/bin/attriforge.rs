fn main() {
    std::process::exit(attriforge::cli::run(std::env::args_os()));
}
