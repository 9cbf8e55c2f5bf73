fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(handcast_cli::run(&args));
}
