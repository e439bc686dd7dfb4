fn main() {
    std::process::exit(ndopfe_cli::dispatch(std::env::args_os()));
}
