fn main() {
    std::process::exit(beliefgraph::harness::cli::run(std::env::args_os()));
}
