fn main() {
    std::process::exit(hvm_cli::run(std::env::args_os()));
}
