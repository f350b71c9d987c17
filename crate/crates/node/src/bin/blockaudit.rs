fn main() {
    std::process::exit(blockaudit_node::cli::main());
}
