fn main() {
    std::process::exit(brainfold_cli::dispatch(std::env::args_os()));
}
