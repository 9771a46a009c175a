fn main() {
    std::process::exit(flowmesh::cli::main_with_args(std::env::args_os()));
}
