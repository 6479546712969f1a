fn main() {
    std::process::exit(responder_bench::cli::main_with_args(std::env::args_os()));
}
