fn main() {
    std::process::exit(chartrans::cli::run(std::env::args_os()));
}
