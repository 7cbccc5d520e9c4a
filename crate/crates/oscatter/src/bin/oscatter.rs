fn main() {
    eprintln!("oscatter CLI: not wired up yet");
    std::process::exit(2);
}
