fn main() -> std::process::ExitCode {
    fedkd::cli::main()
}
