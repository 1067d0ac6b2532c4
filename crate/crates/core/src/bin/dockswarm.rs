fn main() -> std::process::ExitCode {
    dockswarm::cli::main_with(std::env::args_os())
}
