fn main() {
    std::process::exit(binlift_cli::run(std::env::args_os()));
}
