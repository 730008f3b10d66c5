fn main() {
    std::process::exit(mns_core::cli::parse_and_dispatch(std::env::args_os()));
}
