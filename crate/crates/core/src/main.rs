fn main() {
    std::process::exit(czcurve::harness::cli_dispatch(std::env::args_os()));
}
