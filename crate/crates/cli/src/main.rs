fn main() {
    std::process::exit(hoprouter::run(std::env::args_os()));
}
