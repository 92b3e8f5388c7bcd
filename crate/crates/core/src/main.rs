fn main() {
    std::process::exit(mergekin::cli::cli_main(std::env::args_os()));
}
