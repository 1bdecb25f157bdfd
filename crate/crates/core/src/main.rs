fn main() -> std::process::ExitCode {
    mgec::cli::main_entry()
}
