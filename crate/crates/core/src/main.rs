fn main() {
    std::process::exit(action_images::cli::run_cli(std::env::args_os()));
}
