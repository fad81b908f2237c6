fn main() {
    std::process::exit(metric_screen::cli::main_with_args(std::env::args_os()));
}
