fn main() {
    std::process::exit(macs::cli::parse_and_dispatch(std::env::args_os()));
}
