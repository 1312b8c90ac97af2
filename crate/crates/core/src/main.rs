fn main() {
    // CLI wiring lands in cli.rs; placeholder so the binary target builds.
    eprintln!("nsmc: command line not implemented yet");
    std::process::exit(2);
}
