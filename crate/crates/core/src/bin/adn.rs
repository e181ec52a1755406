use adn_core::harness::cli;

fn main() {
    if let Err(e) = cli::configure_threads() {
        eprintln!("error: {e}");
        std::process::exit(cli::EXIT_USAGE);
    }
    std::process::exit(cli::run(std::env::args_os()));
}
