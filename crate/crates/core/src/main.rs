fn main() {
    std::process::exit(mdi_dro::cli::main_with_args(std::env::args_os()));
}
