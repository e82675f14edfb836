fn main() {
    std::process::exit(exporay_cli::run(std::env::args_os()));
}
