fn main() {
    std::process::exit(riemann_theta::cli::run());
}
