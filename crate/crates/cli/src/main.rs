fn main() {
    std::process::exit(hierfss_cli::run(std::env::args_os()));
}
