fn main() {
    let code = lamplighter_cli::run(std::env::args_os());
    std::process::exit(code);
}
