fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(vflkit::cli::main_with(std::env::args()))
}
