fn main() {
    std::process::exit(diffseg::pipeline::cli::run(std::env::args_os()));
}
