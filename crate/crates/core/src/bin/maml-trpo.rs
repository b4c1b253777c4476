fn main() -> std::process::ExitCode {
    maml_trpo::cli::main()
}
