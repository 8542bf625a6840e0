fn main() {
    std::process::exit(splatcost::cli::run(std::env::args_os()));
}
