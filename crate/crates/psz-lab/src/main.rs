fn main() {
    std::process::exit(psz_lab::cli::run(std::env::args_os()));
}
