fn main() -> std::process::ExitCode {
    matchaudit::cli::run()
}
