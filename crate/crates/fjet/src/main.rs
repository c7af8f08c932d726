fn main() {
    std::process::exit(fjet::cli::main_entry());
}
