fn main() -> std::process::ExitCode {
    trajcover::cli::main()
}
