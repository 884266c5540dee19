fn main() {
    std::process::exit(fieldcal::cli::run(std::env::args_os()));
}
