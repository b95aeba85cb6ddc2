fn main() {
    std::process::exit(algebroid_cli::run(std::env::args_os()));
}
