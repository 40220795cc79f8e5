fn main() {
    std::process::exit(loadagg::cli::dispatch(std::env::args_os()));
}
