fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(engage_core::cli::run(&args));
}
