fn main() {
    std::process::exit(dnnperf::cli::main_with_args(std::env::args_os()));
}
