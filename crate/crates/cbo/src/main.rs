fn main() {
    if let Err(err) = cbo::cli::run_cli() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
