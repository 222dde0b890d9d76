fn main() {
    std::process::exit(ktpolyrigid::cli::run(std::env::args_os()));
}
