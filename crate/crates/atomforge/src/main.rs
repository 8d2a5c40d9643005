fn main() {
    std::process::exit(atomforge::run_cli());
}
