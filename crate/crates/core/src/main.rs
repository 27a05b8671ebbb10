fn main() {
    std::process::exit(matchsurv::cli::run(std::env::args_os()));
}
