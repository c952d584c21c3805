fn main() {
    std::process::exit(mfgc_lab::cli::run(std::env::args_os()));
}
