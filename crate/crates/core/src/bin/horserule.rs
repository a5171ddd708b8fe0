fn main() {
    std::process::exit(horserule::cli::run(std::env::args_os()));
}
