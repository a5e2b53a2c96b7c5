fn main() {
    std::process::exit(varlen_feedback::cli::run(std::env::args_os()));
}
