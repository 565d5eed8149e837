fn main() {
    std::process::exit(coordlab_cli::run(std::env::args_os()));
}
