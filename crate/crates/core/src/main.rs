fn main() {
    std::process::exit(spancopy_core::cli::run(std::env::args_os()));
}
