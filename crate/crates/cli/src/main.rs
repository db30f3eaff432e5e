fn main() {
    std::process::exit(superbsde_cli::dispatch(std::env::args_os()));
}
