fn main() {
    std::process::exit(mflq_cli::run(std::env::args_os()));
}
