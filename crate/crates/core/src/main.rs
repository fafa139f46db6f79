fn main() {
    let code = ems_core::cli::run(std::env::args_os());
    std::process::exit(code);
}
