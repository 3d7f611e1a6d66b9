fn main() {
    std::process::exit(geotopic_cli::run(std::env::args_os()));
}
