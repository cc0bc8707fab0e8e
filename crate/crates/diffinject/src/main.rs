fn main() {
    std::process::exit(diffinject::cli::dispatch(std::env::args_os()));
}
