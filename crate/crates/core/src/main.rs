fn main() {
    let code = ncs_testbed::cli::run_from(std::env::args_os());
    std::process::exit(code as i32);
}
