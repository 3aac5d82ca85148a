fn main() {
    std::process::exit(prodloom::cli::dispatch(std::env::args()));
}
