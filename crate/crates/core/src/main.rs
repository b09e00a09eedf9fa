fn main() -> std::process::ExitCode {
    vulnrepair::cli::main()
}
