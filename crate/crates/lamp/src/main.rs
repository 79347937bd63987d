fn main() -> std::process::ExitCode {
    lamp::cli::main()
}
