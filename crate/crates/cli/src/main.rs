fn main() -> std::process::ExitCode {
    env_logger::init();
    dashbell::cli::main_with(std::env::args())
}
