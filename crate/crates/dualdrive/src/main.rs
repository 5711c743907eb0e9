fn main() {
    std::process::exit(dualdrive::cli::run(std::env::args_os()));
}
