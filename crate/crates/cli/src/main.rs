fn main() {
    std::process::exit(texcamo_cli::run(std::env::args_os()));
}
