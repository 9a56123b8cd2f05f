fn main() {
    std::process::exit(pinn_forge::app::run(std::env::args_os()));
}
