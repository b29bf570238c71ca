fn main() {
    std::process::exit(pnkrylov::cli::run());
}
