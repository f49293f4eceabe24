fn main() {
    std::process::exit(qd_hom::cli::run(std::env::args_os()));
}
