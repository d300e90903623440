fn main() {
    std::process::exit(graspda_cli::dispatch(std::env::args_os()));
}
