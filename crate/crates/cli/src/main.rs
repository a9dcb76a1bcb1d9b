fn main() {
    std::process::exit(layerscope_cli::main_with(std::env::args_os()));
}
