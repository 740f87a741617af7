fn main() -> std::process::ExitCode {
    cpkl::cli::main()
}
