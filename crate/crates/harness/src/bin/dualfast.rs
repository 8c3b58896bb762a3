fn main() {
    std::process::exit(dualfast_harness::cli::main_with_args(std::env::args_os()));
}
