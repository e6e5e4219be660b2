fn main() {
    std::process::exit(xqd_cli::run(std::env::args_os()));
}
