fn main() -> std::process::ExitCode {
    memefuse::cli::main()
}
